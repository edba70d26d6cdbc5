/**
 * Cross-validation of the generator's chemistry against RDKit.
 *
 * Consumes a SMILES corpus plus the generator's JSON dump (`molgen dump`)
 * and verifies, per molecule: heavy-atom formula and total charge, per-atom
 * bond-order sums in SMILES appearance order, and graph equivalence of the
 * two canonical forms as judged by RDKit's own canonicalization.
 */

import * as fs from "fs";

import { bondOrderSums, parseMolblock } from "./molblock";
import { RDKitModule, tryMol } from "./rdkit";
import { PenalizedLogPStats, penalizedLogP } from "./penalizedLogp";

export interface DumpRecord {
  input: string;
  canonical: string;
  formula: Record<string, number>;
  total_charge: number;
  atoms: { element: string; charge: number; valence: number }[];
}

export interface Verdict {
  smiles: string;
  formulaMatch: boolean;
  valenceMatch: boolean;
  canonicalEquivalence: boolean;
  penalizedLogp: number | null;
}

export interface CrossCheckResult {
  verdicts: Verdict[];
  skipped: { smiles: string; reason: string }[];
  mismatches: number;
}

export function readCorpusLines(path: string): string[] {
  return fs
    .readFileSync(path, "utf8")
    .split("\n")
    .map((line) => line.trim())
    .filter((line) => line.length > 0 && !line.startsWith("#"));
}

export function readDump(path: string): Map<string, DumpRecord> {
  const map = new Map<string, DumpRecord>();
  for (const line of fs.readFileSync(path, "utf8").split("\n")) {
    if (!line.trim()) continue;
    const record = JSON.parse(line) as DumpRecord;
    map.set(record.input, record);
  }
  return map;
}

function checkOne(
  rdkit: RDKitModule,
  record: DumpRecord,
  stats: PenalizedLogPStats | null
): Verdict | { skip: string } {
  const inputMol = tryMol(rdkit, record.input);
  if (!inputMol) {
    return { skip: "toolkit failed to parse the input line" };
  }
  const primaryMol = tryMol(rdkit, record.canonical);
  if (!primaryMol) {
    // The generator claims this canonical form is valid; the toolkit says no.
    inputMol.delete();
    return {
      smiles: record.input,
      formulaMatch: false,
      valenceMatch: false,
      canonicalEquivalence: false,
      penalizedLogp: null,
    };
  }
  try {
    const canonicalEquivalence = inputMol.get_smiles() === primaryMol.get_smiles();

    const graph = parseMolblock(primaryMol.get_molblock());
    const histogram: Record<string, number> = {};
    for (const el of graph.elements) {
      histogram[el] = (histogram[el] ?? 0) + 1;
    }
    const totalCharge = graph.charges.reduce((s, c) => s + c, 0);
    const formulaMatch =
      totalCharge === record.total_charge &&
      Object.keys(histogram).length === Object.keys(record.formula).length &&
      Object.entries(record.formula).every(([el, n]) => histogram[el] === n);

    let valenceMatch = graph.elements.length === record.atoms.length;
    if (valenceMatch) {
      const sums = bondOrderSums(graph);
      for (let i = 0; i < record.atoms.length; i++) {
        const atom = record.atoms[i];
        if (
          graph.elements[i] !== atom.element ||
          graph.charges[i] !== atom.charge ||
          sums[i] !== atom.valence
        ) {
          valenceMatch = false;
          break;
        }
      }
    }
    const plogp = stats ? penalizedLogP(rdkit, record.canonical, stats) : null;
    return {
      smiles: record.input,
      formulaMatch,
      valenceMatch,
      canonicalEquivalence,
      penalizedLogp: plogp,
    };
  } finally {
    inputMol.delete();
    primaryMol.delete();
  }
}

export function crossCheck(
  rdkit: RDKitModule,
  corpusPath: string,
  dumpPath: string,
  stats: PenalizedLogPStats | null = null
): CrossCheckResult {
  const lines = readCorpusLines(corpusPath);
  const dump = readDump(dumpPath);
  const verdicts: Verdict[] = [];
  const skipped: { smiles: string; reason: string }[] = [];

  for (const line of lines) {
    const record = dump.get(line);
    if (!record) {
      skipped.push({ smiles: line, reason: "not present in the generator dump" });
      continue;
    }
    const outcome = checkOne(rdkit, record, stats);
    if ("skip" in outcome) {
      skipped.push({ smiles: line, reason: outcome.skip });
    } else {
      verdicts.push(outcome);
    }
  }
  const mismatches = verdicts.filter(
    (v) => !(v.formulaMatch && v.valenceMatch && v.canonicalEquivalence)
  ).length;
  return { verdicts, skipped, mismatches };
}

export function verdictsToCsv(result: CrossCheckResult): string {
  const rows = ["smiles,formula_match,valence_match,canonical_equivalence,penalized_logp"];
  for (const v of result.verdicts) {
    const plogp = v.penalizedLogp === null ? "" : v.penalizedLogp.toFixed(6);
    rows.push(
      `${v.smiles},${Number(v.formulaMatch)},${Number(v.valenceMatch)},` +
        `${Number(v.canonicalEquivalence)},${plogp}`
    );
  }
  return rows.join("\n") + "\n";
}
