/** Minimal V2000 molblock reader: elements, formal charges, bond orders. */

export interface MolGraph {
  elements: string[];
  charges: number[];
  bonds: { a: number; b: number; order: number }[];
}

export function parseMolblock(text: string): MolGraph {
  const lines = text.split("\n");
  const counts = lines[3];
  const nAtoms = parseInt(counts.slice(0, 3), 10);
  const nBonds = parseInt(counts.slice(3, 6), 10);

  const elements: string[] = [];
  const charges: number[] = new Array(nAtoms).fill(0);
  for (let i = 0; i < nAtoms; i++) {
    const line = lines[4 + i];
    elements.push(line.slice(31, 34).trim());
  }
  const bonds = [];
  for (let i = 0; i < nBonds; i++) {
    const line = lines[4 + nAtoms + i];
    bonds.push({
      a: parseInt(line.slice(0, 3), 10) - 1,
      b: parseInt(line.slice(3, 6), 10) - 1,
      order: parseInt(line.slice(6, 9), 10),
    });
  }
  for (const line of lines.slice(4 + nAtoms + nBonds)) {
    if (line.startsWith("M  CHG")) {
      const fields = line.trim().split(/\s+/);
      const n = parseInt(fields[2], 10);
      for (let k = 0; k < n; k++) {
        const idx = parseInt(fields[3 + 2 * k], 10) - 1;
        charges[idx] = parseInt(fields[4 + 2 * k], 10);
      }
    }
  }
  return { elements, charges, bonds };
}

export function bondOrderSums(graph: MolGraph): number[] {
  const sums = new Array(graph.elements.length).fill(0);
  for (const { a, b, order } of graph.bonds) {
    sums[a] += order;
    sums[b] += order;
  }
  return sums;
}

/**
 * Lengths of a fundamental cycle basis (spanning-forest chords), the ring
 * measure used for long-cycle penalties.
 */
export function cycleBasisLengths(nAtoms: number, graph: MolGraph): number[] {
  const adj: number[][] = Array.from({ length: nAtoms }, () => []);
  for (const { a, b } of graph.bonds) {
    adj[a].push(b);
    adj[b].push(a);
  }
  const parent = new Array(nAtoms).fill(-1);
  const depth = new Array(nAtoms).fill(-1);
  const lengths: number[] = [];
  const treeEdge = new Set<string>();
  const key = (a: number, b: number) => `${Math.min(a, b)}:${Math.max(a, b)}`;

  for (let root = 0; root < nAtoms; root++) {
    if (depth[root] >= 0) continue;
    depth[root] = 0;
    const queue = [root];
    while (queue.length) {
      const u = queue.shift()!;
      for (const v of adj[u]) {
        if (depth[v] < 0) {
          depth[v] = depth[u] + 1;
          parent[v] = u;
          treeEdge.add(key(u, v));
          queue.push(v);
        }
      }
    }
  }
  const seen = new Set<string>();
  for (const { a, b } of graph.bonds) {
    const k = key(a, b);
    if (treeEdge.has(k) || seen.has(k)) continue;
    seen.add(k);
    // cycle length = tree-path length between endpoints + 1
    let u = a;
    let v = b;
    let steps = 1;
    while (u !== v) {
      if (depth[u] >= depth[v]) {
        u = parent[u];
      } else {
        v = parent[v];
      }
      steps += 1;
    }
    lengths.push(steps);
  }
  return lengths;
}
