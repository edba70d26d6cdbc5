/**
 * Entry points:
 *   cross-check    --corpus FILE --dump FILE [--out CSV] [--stats JSON]
 *   fit            --corpus FILE --out STATS_JSON
 *   penalized-logp --stats STATS_JSON           (line protocol on stdio)
 *
 * Exit codes: 0 clean, 1 usage/runtime error, 2 cross-check mismatches.
 */

import * as fs from "fs";
import * as readline from "readline";

import { crossCheck, readCorpusLines, verdictsToCsv } from "./crossCheck";
import { fitStats, loadStats, penalizedLogP, saveStats } from "./penalizedLogp";
import { getRDKit } from "./rdkit";

function parseArgs(argv: string[]): Record<string, string> {
  const args: Record<string, string> = {};
  for (let i = 0; i < argv.length; i += 2) {
    if (!argv[i].startsWith("--") || i + 1 >= argv.length) {
      throw new Error(`bad argument ${argv[i]}`);
    }
    args[argv[i].slice(2)] = argv[i + 1];
  }
  return args;
}

function required(args: Record<string, string>, name: string): string {
  const value = args[name];
  if (!value) throw new Error(`missing --${name}`);
  return value;
}

async function cmdCrossCheck(args: Record<string, string>): Promise<number> {
  const rdkit = await getRDKit();
  const stats = args.stats ? loadStats(args.stats) : null;
  const result = crossCheck(rdkit, required(args, "corpus"), required(args, "dump"), stats);
  const csv = verdictsToCsv(result);
  if (args.out) {
    fs.writeFileSync(args.out, csv);
  } else {
    process.stdout.write(csv);
  }
  const n = result.verdicts.length;
  const ok = (field: keyof (typeof result.verdicts)[number]) =>
    result.verdicts.filter((v) => v[field] === true).length;
  console.error(
    `checked ${n} molecules (${result.skipped.length} skipped): ` +
      `formula ${ok("formulaMatch")}/${n}, valence ${ok("valenceMatch")}/${n}, ` +
      `canonical ${ok("canonicalEquivalence")}/${n}, mismatches ${result.mismatches}`
  );
  for (const s of result.skipped.slice(0, 10)) {
    console.error(`skipped: ${s.smiles} (${s.reason})`);
  }
  return result.mismatches > 0 ? 2 : 0;
}

async function cmdFit(args: Record<string, string>): Promise<number> {
  const rdkit = await getRDKit();
  const lines = readCorpusLines(required(args, "corpus"));
  const stats = fitStats(rdkit, lines);
  saveStats(required(args, "out"), stats);
  console.error(
    `fitted ${stats.variant} on ${stats.n} molecules: ` +
      `logP ${stats.logP.mean.toFixed(3)}+-${stats.logP.std.toFixed(3)}, ` +
      `SA ${stats.sa.mean.toFixed(3)}+-${stats.sa.std.toFixed(3)}, ` +
      `cycle ${stats.cycle.mean.toFixed(3)}+-${stats.cycle.std.toFixed(3)}`
  );
  return 0;
}

async function cmdPenalizedLogp(args: Record<string, string>): Promise<number> {
  const rdkit = await getRDKit();
  const stats = loadStats(required(args, "stats"));
  const rl = readline.createInterface({ input: process.stdin, terminal: false });
  for await (const line of rl) {
    const smiles = line.trim();
    if (!smiles) continue;
    const value = penalizedLogP(rdkit, smiles, stats);
    process.stdout.write(Number.isNaN(value) ? "NaN\n" : `${value}\n`);
  }
  return 0;
}

async function main(): Promise<number> {
  const [command, ...rest] = process.argv.slice(2);
  try {
    const args = parseArgs(rest);
    switch (command) {
      case "cross-check":
        return await cmdCrossCheck(args);
      case "fit":
        return await cmdFit(args);
      case "penalized-logp":
        return await cmdPenalizedLogp(args);
      default:
        console.error("usage: cli.js {cross-check|fit|penalized-logp} --flag value ...");
        return 1;
    }
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

main().then((code) => process.exit(code));
