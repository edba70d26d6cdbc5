import { execFileSync } from "child_process";
import * as fs from "fs";
import * as os from "os";
import * as path from "path";

export const REPO_ROOT = path.resolve(__dirname, "..", "..");
export const CORPUS_100 = path.join(REPO_ROOT, "data", "zinc100.smi");
export const CORPUS_1000 = path.join(REPO_ROOT, "data", "synthetic1000.smi");
export const CLI = path.resolve(__dirname, "..", "dist", "cli.js");

export function tmpDir(): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), "oracle-test-"));
}

/** Run the generator's dump command (its external JSON interface). */
export function molgenDump(corpus: string, out: string): void {
  execFileSync("molgen", ["dump", "--corpus", corpus, "--out", out], {
    stdio: ["ignore", "pipe", "pipe"],
  });
}
