/**
 * Synthetic-accessibility score in the Ertl & Schuffenhauer style.
 *
 * The complexity penalties (size, stereo, spiro, bridgehead, macrocycle)
 * follow the published formulas.  The fragment-familiarity term is fitted
 * from the supplied corpus (Morgan radius-2 bit frequencies) instead of the
 * original PubChem-derived table, which is not redistributable here; the
 * variant is recorded in the stats file and output headers.
 */

import { Mol, RDKitModule, tryMol } from "./rdkit";
import { cycleBasisLengths, MolGraph, parseMolblock } from "./molblock";

export const FRAGMENT_RADIUS = 2;
export const FRAGMENT_BITS = 2048;
const UNSEEN_FRAGMENT_SCORE = -4.0;

export interface FragmentStats {
  variant: string;
  radius: number;
  nBits: number;
  maxCount: number;
  counts: Record<string, number>;
}

export function morganBits(mol: Mol): number[] {
  const fp = mol.get_morgan_fp(
    JSON.stringify({ radius: FRAGMENT_RADIUS, nBits: FRAGMENT_BITS })
  );
  const bits: number[] = [];
  for (let i = 0; i < fp.length; i++) {
    if (fp[i] === "1") bits.push(i);
  }
  return bits;
}

export function fitFragmentStats(rdkit: RDKitModule, smilesList: string[]): FragmentStats {
  const counts: Record<string, number> = {};
  for (const smiles of smilesList) {
    const mol = tryMol(rdkit, smiles);
    if (!mol) continue;
    for (const bit of morganBits(mol)) {
      const k = String(bit);
      counts[k] = (counts[k] ?? 0) + 1;
    }
    mol.delete();
  }
  const maxCount = Math.max(1, ...Object.values(counts));
  return {
    variant: "corpus-fit fragment frequencies",
    radius: FRAGMENT_RADIUS,
    nBits: FRAGMENT_BITS,
    maxCount,
    counts,
  };
}

function fragmentScore(bits: number[], stats: FragmentStats): number {
  if (bits.length === 0) return 0;
  let total = 0;
  for (const bit of bits) {
    const count = stats.counts[String(bit)];
    total += count ? Math.log10(count / stats.maxCount) + 1.0 : UNSEEN_FRAGMENT_SCORE;
  }
  return total / bits.length;
}

export function saScore(mol: Mol, stats: FragmentStats): number {
  const descriptors = JSON.parse(mol.get_descriptors());
  const graph: MolGraph = parseMolblock(mol.get_molblock());
  const nAtoms = graph.elements.length;
  const bits = morganBits(mol);

  const score1 = fragmentScore(bits, stats);

  const ringLengths = cycleBasisLengths(nAtoms, graph);
  const sizePenalty = Math.pow(nAtoms, 1.005) - nAtoms;
  const stereoPenalty = Math.log10((descriptors.NumAtomStereoCenters ?? 0) + 1);
  const spiroPenalty = Math.log10((descriptors.NumSpiroAtoms ?? 0) + 1);
  const bridgePenalty = Math.log10((descriptors.NumBridgeheadAtoms ?? 0) + 1);
  const macroPenalty = ringLengths.some((len) => len > 8) ? Math.log10(2) : 0;
  const score2 = -(sizePenalty + stereoPenalty + spiroPenalty + bridgePenalty + macroPenalty);

  // correction for symmetric molecules whose atoms outnumber their fragments
  const score3 = nAtoms > bits.length ? Math.log(nAtoms / bits.length) * 0.5 : 0;

  let sa = score1 + score2 + score3;
  const min = -4.0;
  const max = 2.5;
  sa = 11.0 - ((sa - min + 1.0) / (max - min)) * 9.0;
  if (sa > 8.0) sa = 8.0 + Math.log(sa + 1.0 - 9.0);
  if (sa > 10.0) sa = 10.0;
  if (sa < 1.0) sa = 1.0;
  return sa;
}
