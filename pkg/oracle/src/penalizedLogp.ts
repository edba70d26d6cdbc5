/**
 * Penalized logP: octanol-water partition coefficient minus synthetic
 * accessibility minus a long-cycle penalty, each standardized over a
 * reference corpus.  Standardization constants live in a sidecar stats
 * file written by `fit`, so downstream experiments are reproducible.
 */

import * as fs from "fs";

import { cycleBasisLengths, parseMolblock } from "./molblock";
import { RDKitModule, tryMol } from "./rdkit";
import { FragmentStats, fitFragmentStats, saScore } from "./sascore";

export interface Moments {
  mean: number;
  std: number;
}

export interface PenalizedLogPStats {
  variant: string;
  n: number;
  logP: Moments;
  sa: Moments;
  cycle: Moments;
  fragments: FragmentStats;
}

function moments(values: number[]): Moments {
  const n = values.length;
  const mean = values.reduce((s, v) => s + v, 0) / n;
  const variance = values.reduce((s, v) => s + (v - mean) * (v - mean), 0) / n;
  const std = Math.sqrt(variance);
  return { mean, std: std > 0 ? std : 1.0 };
}

function rawComponents(
  rdkit: RDKitModule,
  smiles: string,
  fragments: FragmentStats
): { logP: number; sa: number; cycle: number } | null {
  const mol = tryMol(rdkit, smiles);
  if (!mol) return null;
  try {
    const descriptors = JSON.parse(mol.get_descriptors());
    const graph = parseMolblock(mol.get_molblock());
    const lengths = cycleBasisLengths(graph.elements.length, graph);
    const maxLen = lengths.length ? Math.max(...lengths) : 0;
    return {
      logP: descriptors.CrippenClogP,
      sa: saScore(mol, fragments),
      cycle: Math.max(0, maxLen - 6),
    };
  } finally {
    mol.delete();
  }
}

export function fitStats(rdkit: RDKitModule, smilesList: string[]): PenalizedLogPStats {
  const fragments = fitFragmentStats(rdkit, smilesList);
  const logPs: number[] = [];
  const sas: number[] = [];
  const cycles: number[] = [];
  for (const smiles of smilesList) {
    const c = rawComponents(rdkit, smiles, fragments);
    if (!c) continue;
    logPs.push(c.logP);
    sas.push(c.sa);
    cycles.push(c.cycle);
  }
  if (logPs.length === 0) {
    throw new Error("no parseable molecules to fit penalized-logP statistics");
  }
  return {
    variant:
      "standardized penalized logP (CrippenClogP - corpus-fit SA - long-cycle count)",
    n: logPs.length,
    logP: moments(logPs),
    sa: moments(sas),
    cycle: moments(cycles),
    fragments,
  };
}

export function loadStats(path: string): PenalizedLogPStats {
  return JSON.parse(fs.readFileSync(path, "utf8")) as PenalizedLogPStats;
}

export function saveStats(path: string, stats: PenalizedLogPStats): void {
  fs.writeFileSync(path, JSON.stringify(stats));
}

/** Standardized penalized logP; NaN when the toolkit cannot parse the input. */
export function penalizedLogP(
  rdkit: RDKitModule,
  smiles: string,
  stats: PenalizedLogPStats
): number {
  const c = rawComponents(rdkit, smiles, stats.fragments);
  if (!c) return NaN;
  const z = (v: number, m: Moments) => (v - m.mean) / m.std;
  return z(c.logP, stats.logP) - z(c.sa, stats.sa) - z(c.cycle, stats.cycle);
}
