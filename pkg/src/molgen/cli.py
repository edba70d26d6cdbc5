"""Command-line surface binding the library together.

Commands: train, reconstruct, sample, optimize, eval, dump.  Options come
from built-in defaults, overridden by a flat `key = value` config file,
overridden by explicit flags.  All file outputs are written atomically.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from molgen.chem.smiles import load_corpus, write_smiles_with_order
from molgen.chem.vocab import Vocabulary, default_vocabulary
from molgen.errors import MolgenError
from molgen.evalgen import (
    constrained_sweep,
    metrics,
    reconstruct,
    sample_prior,
)
from molgen.model import HyperParams, MoleculeVAE
from molgen.params import atomic_write_text
from molgen.properties import resolve_property
from molgen.train import TrainConfig, train

_DEFAULTS = {
    "seed": 0,
    "threads": None,  # resolved to cpu count at run time
    "count": 100,
    "delta": "0.4",
    "steps": 10,
    "step_size": 0.05,
    "restarts": 20,
    "mode": "max_prob",
    "property": "bond_sum",
    "batch_size": 50,
    "lr": 3e-4,
    "max_epochs": 100000,
    "hidden": 128,
    "latent": 56,
    "enc_layers": 4,
    "dec_layers": 4,
    "w_kl": 1e-2,
    "kl_warmup": 0,
}


def _read_config(path: str | None) -> dict:
    if path is None:
        return {}
    cfg = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _DEFAULTS:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        cfg[key] = value
    return cfg


def _opt(args: argparse.Namespace, config: dict, key: str):
    """CLI flag beats config file beats built-in default."""
    cli_value = getattr(args, key, None)
    if cli_value is not None:
        return cli_value
    if key in config:
        default = _DEFAULTS[key]
        caster = type(default) if default is not None else str
        if caster is bool:
            return config[key].lower() in ("1", "true", "yes")
        return caster(config[key])
    return _DEFAULTS[key]


def _threads(args, config) -> int:
    value = _opt(args, config, "threads")
    if value is None:
        import os
        return os.cpu_count() or 1
    return int(value)


def _load_mols(path: str, vocab: Vocabulary, quiet: bool = False):
    skipped: list[str] = []

    def on_skip(lineno, line, reason):
        skipped.append(f"line {lineno}: {reason}")

    pairs = load_corpus(path, vocab, on_skip=on_skip)
    if skipped and not quiet:
        print(f"skipped {len(skipped)} corpus line(s):", file=sys.stderr)
        for msg in skipped[:10]:
            print(f"  {msg}", file=sys.stderr)
    return pairs


def _require_file(path: str | None, what: str) -> Path:
    if path is None:
        raise MolgenError(f"missing required --{what}")
    p = Path(path)
    if not p.exists():
        raise MolgenError(f"{what} file not found: {p}")
    return p


def _load_model(args) -> MoleculeVAE:
    path = _require_file(args.checkpoint, "checkpoint")
    model, _ = MoleculeVAE.load(path)
    return model


def _csv_text(columns, rows) -> str:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in columns))
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


# -- commands -------------------------------------------------------------------


def cmd_train(args) -> int:
    config = _read_config(args.config)
    corpus_path = _require_file(args.corpus, "corpus")
    out_dir = Path(args.out or "run")
    vocab = default_vocabulary() if args.vocab is None else Vocabulary.from_file(args.vocab)
    pairs = _load_mols(corpus_path, vocab)
    if not pairs:
        raise MolgenError(f"no usable molecules in {corpus_path}")
    mols = [m for _, m in pairs]

    max_atoms = max(m.size for m in mols)
    hp = HyperParams(
        hidden=int(_opt(args, config, "hidden")),
        latent=int(_opt(args, config, "latent")),
        enc_layers=int(_opt(args, config, "enc_layers")),
        dec_layers=int(_opt(args, config, "dec_layers")),
        n_types=len(vocab),
        max_atoms=max_atoms,
        pos_cap=max_atoms,
        w_kl=float(_opt(args, config, "w_kl")),
    )
    seed = int(_opt(args, config, "seed"))
    prop_name = args.property if args.supervise_property else None
    tc = TrainConfig(
        batch_size=int(_opt(args, config, "batch_size")),
        initial_lr=float(_opt(args, config, "lr")),
        max_epochs=int(_opt(args, config, "max_epochs")),
        seed=seed,
        property_name=prop_name,
        kl_warmup_epochs=int(_opt(args, config, "kl_warmup")),
    )
    property_fn = None
    if prop_name is not None:
        property_fn = resolve_property(prop_name, vocab=vocab)

    model = MoleculeVAE.initialize(hp, vocab, seed=seed)
    result = train(
        tc, mols, model, out_dir=out_dir, property_fn=property_fn,
        log=lambda msg: print(msg, file=sys.stderr),
    )
    print(
        f"trained {result.epochs} epochs, final loss {result.final_loss:.6f}, "
        f"best {result.best_loss:.6f}, stop rule fired: {result.stopped_by_schedule}"
    )
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def cmd_reconstruct(args) -> int:
    config = _read_config(args.config)
    model = _load_model(args)
    corpus_path = _require_file(args.corpus, "corpus")
    pairs = _load_mols(corpus_path, model.vocab)
    seed = int(_opt(args, config, "seed"))
    restarts = int(_opt(args, config, "restarts"))

    rows = []
    exact_count = 0
    for idx, (line, mol) in enumerate(pairs):
        decoded, exact = reconstruct(model, mol, n_restarts=restarts, seed=seed + idx)
        exact_count += exact
        rows.append(
            {
                "input": write_smiles_with_order(mol, model.vocab)[0],
                "decoded": write_smiles_with_order(decoded, model.vocab)[0],
                "exact": int(exact),
            }
        )
    rate = exact_count / len(rows) if rows else 0.0
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        atomic_write_text(out / "reconstruction.csv", _csv_text(("input", "decoded", "exact"), rows))
    print(f"reconstruction: {exact_count}/{len(rows)} exact ({rate:.1%})")
    return 0


def cmd_sample(args) -> int:
    config = _read_config(args.config)
    model = _load_model(args)
    seed = int(_opt(args, config, "seed"))
    count = int(_opt(args, config, "count"))
    restarts = int(_opt(args, config, "restarts"))
    mode = str(_opt(args, config, "mode"))
    mols = sample_prior(
        model, count, seed=seed, n_restarts=restarts, mode=mode,
        threads=_threads(args, config),
    )
    smiles = [write_smiles_with_order(m, model.vocab)[0] for m in mols]
    for s in smiles:
        print(s)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        atomic_write_text(out / "samples.smi", "\n".join(smiles) + ("\n" if smiles else ""))
        if args.corpus:
            pairs = _load_mols(args.corpus, model.vocab, quiet=True)
            train_smiles = {write_smiles_with_order(m, model.vocab)[0] for _, m in pairs}
            report = metrics(mols, train_smiles, model)
            rows = [{"metric": k, "value": v} for k, v in report.rows()]
            atomic_write_text(out / "sample_metrics.csv", _csv_text(("metric", "value"), rows))
    return 0


def cmd_optimize(args) -> int:
    config = _read_config(args.config)
    model = _load_model(args)
    corpus_path = _require_file(args.corpus, "corpus")
    pairs = _load_mols(corpus_path, model.vocab)
    seed = int(_opt(args, config, "seed"))
    count = int(_opt(args, config, "count"))
    steps = int(_opt(args, config, "steps"))
    step_size = float(_opt(args, config, "step_size"))
    restarts = int(_opt(args, config, "restarts"))
    prop_name = str(_opt(args, config, "property"))
    property_fn = resolve_property(prop_name, oracle_cmd=args.oracle_cmd, vocab=model.vocab)
    deltas = [float(x) for x in str(_opt(args, config, "delta")).split(",")]

    mols = [m for _, m in pairs][:count]
    rows = constrained_sweep(
        model, mols, deltas, steps, step_size, property_fn,
        n_restarts=restarts, seed=seed, threads=_threads(args, config),
    )
    columns = (
        "delta", "n", "success_rate",
        "improvement_mean", "improvement_std",
        "similarity_mean", "similarity_std",
    )
    table = [
        {c: getattr(r, c) for c in columns}
        for r in rows
    ]
    text = _csv_text(columns, table)
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        atomic_write_text(out / "optimization.csv", text)
    return 0


def cmd_eval(args) -> int:
    vocab = default_vocabulary() if args.vocab is None else Vocabulary.from_file(args.vocab)
    gen_path = _require_file(args.generated, "generated")
    train_path = _require_file(args.train, "train")
    gen_pairs = _load_mols(gen_path, vocab)
    train_pairs = _load_mols(train_path, vocab, quiet=True)
    train_smiles = {write_smiles_with_order(m, vocab)[0] for _, m in train_pairs}
    report = metrics([m for _, m in gen_pairs], train_smiles)
    rows = [{"metric": k, "value": v} for k, v in report.rows()]
    text = _csv_text(("metric", "value"), rows)
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        atomic_write_text(out / "eval.csv", text)
    return 0


def cmd_dump(args) -> int:
    """Per-molecule JSON dump consumed by external cross-checking tools."""
    vocab = default_vocabulary() if args.vocab is None else Vocabulary.from_file(args.vocab)
    corpus_path = _require_file(args.corpus, "corpus")
    pairs = _load_mols(corpus_path, vocab)
    lines = []
    for line, mol in pairs:
        canonical, order = write_smiles_with_order(mol, vocab)
        formula: dict[str, int] = {}
        for atom in mol.atoms:
            formula[atom.atom_type.element] = formula.get(atom.atom_type.element, 0) + 1
        lines.append(
            json.dumps(
                {
                    "input": line,
                    "canonical": canonical,
                    "formula": formula,
                    "total_charge": sum(a.atom_type.formal_charge for a in mol.atoms),
                    "atoms": [
                        {
                            "element": mol.atoms[i].atom_type.element,
                            "charge": mol.atoms[i].atom_type.formal_charge,
                            "valence": mol.bond_order_sum(i),
                        }
                        for i in order
                    ],
                },
                sort_keys=True,
            )
        )
    payload = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        atomic_write_text(args.out, payload)
        print(f"dumped {len(lines)} molecules to {args.out}")
    else:
        print(payload, end="")
    return 0


# -- argument parsing ------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--vocab", help="vocabulary/valence table file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="molgen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a SMILES corpus")
    _add_common(p)
    p.add_argument("--corpus")
    p.add_argument("--out")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--latent", type=int)
    p.add_argument("--enc-layers", dest="enc_layers", type=int)
    p.add_argument("--dec-layers", dest="dec_layers", type=int)
    p.add_argument("--w-kl", dest="w_kl", type=float)
    p.add_argument("--kl-warmup", dest="kl_warmup", type=int)
    p.add_argument("--property", choices=["atoms", "bond_sum", "rings", "oracle"])
    p.add_argument("--supervise-property", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="reconstruction accuracy over a corpus")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--out")
    p.add_argument("--restarts", type=int)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("sample", help="sample molecules from the prior")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--count", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--mode", choices=["max_prob", "bernoulli"])
    p.add_argument("--corpus", help="training corpus, enables novelty metrics")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("optimize", help="similarity-constrained property optimization")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--count", type=int, help="number of start molecules")
    p.add_argument("--delta", help="similarity threshold(s), comma separated")
    p.add_argument("--steps", type=int)
    p.add_argument("--step-size", dest="step_size", type=float)
    p.add_argument("--restarts", type=int)
    p.add_argument("--property", choices=["atoms", "bond_sum", "rings", "oracle"])
    p.add_argument("--oracle-cmd", dest="oracle_cmd")
    p.add_argument("--out")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("eval", help="novelty/uniqueness of generated molecules")
    _add_common(p)
    p.add_argument("--generated")
    p.add_argument("--train")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dump", help="JSON dump of parsed molecules for cross-checks")
    _add_common(p)
    p.add_argument("--corpus")
    p.add_argument("--out")
    p.set_defaults(func=cmd_dump)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MolgenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
