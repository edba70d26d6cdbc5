import type { JSMol, RDKitLoader, RDKitModule } from "@rdkit/rdkit";

// The package's CommonJS entry point exports the loader function itself;
// its typings only declare the browser global, so cast the require.
// eslint-disable-next-line @typescript-eslint/no-var-requires
const initRDKitModule = require("@rdkit/rdkit") as RDKitLoader;

export type { JSMol, RDKitModule };
export type Mol = JSMol;

let instance: Promise<RDKitModule> | null = null;

export function getRDKit(): Promise<RDKitModule> {
  if (!instance) {
    instance = initRDKitModule();
  }
  return instance;
}

/** Parse a SMILES with sanitization; returns null when the toolkit rejects it. */
export function tryMol(rdkit: RDKitModule, smiles: string): Mol | null {
  try {
    const mol = rdkit.get_mol(smiles);
    if (!mol || !mol.is_valid()) {
      mol?.delete();
      return null;
    }
    return mol;
  } catch {
    return null;
  }
}
