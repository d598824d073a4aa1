"""Command-line interface.

Subcommands: ``fit``, ``rank``, ``fold``, ``evaluate``, ``synth``. Every
subcommand writes into the ``--out`` directory. Exit status is 0 on
success, 2 on input errors, 3 on numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .errors import ClassRescalError, ConfigurationError, InputError, NumericalError, ShapeError
from .evaluation import (
    DEFAULT_TRAIN_FRACTIONS,
    METHODS,
    SplitSpec,
    SynthSpec,
    evaluate,
    fit_method,
    generate_planted,
    sweep_factors,
    sweep_relations,
)
from .fold_rank import FoldInSlices, factor_scores, fold_in, orientation_from_labels, rank_entities
from .graph_data import (
    EntityIndex,
    balanced_subsample,
    load_index,
    load_labels,
    load_triples,
    save_index,
    write_labels,
    write_triples,
)
from .rescal import HyperParams, load_model, save_model

logger = logging.getLogger("classrescal")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


def _float_list(text):
    return [float(x) for x in str(text).split(",") if x.strip()]


def _int_list(text):
    return [int(x) for x in str(text).split(",") if x.strip()]


def _fractions(text):
    vals = _float_list(text)
    # accept percentages as well as fractions
    return [v / 100 if v > 1 else v for v in vals]


def _delimiter(text):
    return None if text in ("", "whitespace", "ws") else text.encode().decode("unicode_escape")


def _fmt(x: float) -> str:
    return repr(float(x))


def _add_hyperparams(p, method_choices=METHODS, default_method="class_rescal"):
    d = HyperParams()
    p.add_argument("--method", choices=method_choices, default=default_method)
    p.add_argument("--rank", type=int, default=d.rank, help="number of latent factors r")
    p.add_argument("--lambda-a", type=float, default=d.lambda_a)
    p.add_argument("--lambda-r", type=float, default=d.lambda_r)
    p.add_argument("--lambda-g", type=float, default=d.lambda_g)
    p.add_argument("--k", type=int, default=d.k_neighbors, help="neighbors in the k-NN vote")
    p.add_argument("--epsilon", type=float, default=d.epsilon)
    p.add_argument("--max-iter", type=int, default=d.max_iter)


def _add_common(p):
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", type=Path, help="key=value file; command-line flags win")
    p.add_argument("--delimiter", type=_delimiter, default="\t", help="triple field separator (default TAB)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="classrescal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="factorize a triple file")
    _add_common(p)
    _add_hyperparams(p)
    p.add_argument("--triples", type=Path, required=True)
    p.add_argument("--labels", type=Path)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("rank", help="rank entities by mean factor score")
    _add_common(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--index", type=Path, help="index sidecar (default: the one recorded in the model)")
    p.add_argument("--labels", type=Path, help="training labels used to orient the score")
    p.add_argument("--fold-triples", type=Path, help="rank only the unseen entities in this triple file")
    p.add_argument("--top", type=int, help="keep only the N highest-ranked entities")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("fold", help="project unseen entities into a trained model")
    _add_common(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--index", type=Path)
    p.add_argument("--fold-triples", type=Path, required=True)
    p.set_defaults(func=cmd_fold)

    p = sub.add_parser("evaluate", help="repeated train/test ranking evaluation")
    _add_common(p)
    _add_hyperparams(p, method_choices=METHODS + ("both",), default_method="both")
    p.add_argument("--triples", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--train-fractions", type=_fractions, default=list(DEFAULT_TRAIN_FRACTIONS))
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--subsample", type=int, help="balanced subsample of N entities per class first")
    p.add_argument("--sweep-rank", type=_int_list, help="comma-separated r values")
    p.add_argument("--sweep-relations", type=_int_list, help="comma-separated relation counts")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="write a planted two-class multi-relational graph")
    _add_common(p)
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--relations", type=int, default=3)
    p.add_argument("--p-intra", type=_float_list, default=[0.10])
    p.add_argument("--p-inter", type=_float_list, default=[0.02])
    p.set_defaults(func=cmd_synth)
    parser.set_defaults(commands=sub.choices)
    return parser


def read_config(path: Path) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.lstrip("-").replace("-", "_")] = value.strip("\"'")
    return values


def _find_config(argv):
    for pos, tok in enumerate(argv):
        if tok == "--config" and pos + 1 < len(argv):
            return Path(argv[pos + 1])
        if tok.startswith("--config="):
            return Path(tok.split("=", 1)[1])
    return None


def parse_args(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    config_path = _find_config(argv)
    commands = parser.get_default("commands")
    command = next((tok for tok in argv if tok in commands), None)
    if config_path is not None and command is not None:
        # config values become defaults, so explicit flags still win
        config = read_config(config_path)
        subparser = commands[command]
        known = {a.dest for a in subparser._actions} - {"help", "config", "func", "commands"}
        unknown = sorted(set(config) - known)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        subparser.set_defaults(**config)
        for action in subparser._actions:
            if action.dest in config:
                action.required = False
    return parser.parse_args(argv)


def params_from_args(args) -> HyperParams:
    return HyperParams(
        rank=args.rank,
        lambda_a=args.lambda_a,
        lambda_r=args.lambda_r,
        lambda_g=args.lambda_g,
        k_neighbors=args.k,
        epsilon=args.epsilon,
        max_iter=args.max_iter,
        seed=args.seed,
    )


def _write_csv(path: Path, header, rows):
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_fit(args):
    params = params_from_args(args)
    tensor, entities, relations = load_triples(args.triples, delimiter=args.delimiter)
    labels = None
    if args.labels is not None:
        if args.method == "rescal":
            logger.warning("--labels is ignored by method=rescal (used only to orient scores)")
        labels = load_labels(args.labels, entities)
    elif args.method == "class_rescal":
        raise ConfigurationError("method class_rescal requires --labels")
    model, trace = fit_method(args.method, tensor, labels, params)
    orientation = orientation_from_labels(factor_scores(model.a), labels) if labels is not None else 1

    out = args.out
    save_index(out / "index.json", entities, relations)
    save_model(out / "model.json", model, params, method=args.method, orientation=orientation, index="index.json")
    last = trace.records[-1]
    report = {"params": asdict(params), **trace.to_dict()}
    (out / "report.json").write_text(json.dumps(report, indent=1) + "\n", encoding="utf-8")
    summary = (
        f"method: {args.method}\n"
        f"entities: {tensor.n_entities}  relations: {tensor.n_relations}  nnz: {tensor.nnz}  rank: {params.rank}\n"
        f"iterations: {trace.iterations}  converged: {trace.converged}\n"
        f"final f: {last.f:.6g}  g: {last.g:.6g}  h: {last.h:.6g}  (f+g+h)/|T|^2: {last.objective:.6g}\n"
    )
    (out / "summary.txt").write_text(summary, encoding="utf-8")
    print(summary, end="")


def _load_model_and_index(args):
    model, payload = load_model(args.model)
    index_path = args.index or args.model.parent / payload.get("index", "index.json")
    entities, relations = load_index(index_path)
    if len(entities) != model.n_entities or len(relations) != model.n_relations:
        raise ShapeError(
            f"index {index_path} ({len(entities)} entities, {len(relations)} relations) does not match "
            f"model ({model.n_entities} entities, {model.n_relations} relations)"
        )
    params = HyperParams(**payload["params"]) if "params" in payload else HyperParams(rank=model.rank)
    return model, payload, params, entities, relations


def read_fold_triples(path, entities: EntityIndex, relations: EntityIndex, delimiter="\t"):
    """Collect links between unseen ids and known entities.

    Returns the new ids (first-appearance order) and a :class:`FoldInSlices`.
    Links between two unseen ids, links between two known ids and unknown
    relations are skipped.
    """
    new_index = EntityIndex()
    links = []
    skipped = 0
    tensor_like, ids, rels = load_triples(path, delimiter=delimiter)
    for i, k, j in tensor_like.triples():
        src, rel, dst = ids.id_of(i), rels.id_of(k), ids.id_of(j)
        kk = relations.get(rel)
        src_known, dst_known = src in entities, dst in entities
        if kk is None or src_known == dst_known:
            skipped += 1
            continue
        if dst_known:
            links.append((new_index.add(src), kk, entities[dst], True))
        else:
            links.append((new_index.add(dst), kk, entities[src], False))
    if skipped:
        logger.warning("%s: skipped %d triples not linking an unseen id to a known entity", path, skipped)
    if len(new_index) == 0:
        raise InputError(f"{path}: no unseen entities linked to the model")
    slices = FoldInSlices.from_triples(links, len(new_index), len(entities), len(relations))
    return new_index, slices


def cmd_rank(args):
    model, payload, params, entities, relations = _load_model_and_index(args)
    orientation = payload.get("orientation", 1)
    if args.labels is not None:
        orientation = orientation_from_labels(factor_scores(model.a), load_labels(args.labels, entities))
    if args.fold_triples is not None:
        ids, slices = read_fold_triples(args.fold_triples, entities, relations, args.delimiter)
        a = fold_in(model, slices, params)
    else:
        ids, a = entities, model.a
    result = rank_entities(a, orientation=orientation)
    order = result.order if args.top is None else result.order[: args.top]
    _write_csv(
        args.out / "ranking.csv",
        ["entity_id", "score", "rank"],
        [[ids.id_of(i), _fmt(result.scores[i]), pos] for pos, i in enumerate(order, start=1)],
    )
    print(f"ranked {len(order)} entities (orientation {orientation:+d}) -> {args.out / 'ranking.csv'}")


def cmd_fold(args):
    model, _, params, entities, relations = _load_model_and_index(args)
    ids, slices = read_fold_triples(args.fold_triples, entities, relations, args.delimiter)
    rows = fold_in(model, slices, params)
    _write_csv(
        args.out / "fold.csv",
        ["entity_id"] + [f"f{j}" for j in range(model.rank)],
        [[ids.id_of(i)] + [_fmt(v) for v in rows[i]] for i in range(len(ids))],
    )
    print(f"folded {len(ids)} entities -> {args.out / 'fold.csv'}")


def cmd_evaluate(args):
    params = params_from_args(args)
    tensor, entities, _ = load_triples(args.triples, delimiter=args.delimiter)
    labels = load_labels(args.labels, entities)
    if args.subsample:
        tensor, _, labels = balanced_subsample(tensor, labels, args.subsample, seed=args.seed)
    methods = list(METHODS) if args.method == "both" else [args.method]
    out = args.out

    results = {m: [evaluate(tensor, labels, SplitSpec(s, args.runs, args.seed), params, m) for s in args.train_fractions] for m in methods}
    run_rows, summary_rows, curve_rows = [], [], []
    for fi, s in enumerate(args.train_fractions):
        for run in range(args.runs):
            row = [_fmt(s), run, args.seed + run]
            for m in methods:
                row.append(_fmt(results[m][fi].runs[run].aupr))
            run_rows.append(row)
        srow = [_fmt(s)]
        for m in methods:
            srow += [_fmt(results[m][fi].mean_aupr), _fmt(results[m][fi].std_aupr)]
        summary_rows.append(srow)
        for m in methods:
            for rr in results[m][fi].runs:
                for rank, (rec, prec) in enumerate(rr.curve.points, start=1):
                    curve_rows.append([m, _fmt(s), rr.run, rank, _fmt(rec), _fmt(prec)])
    _write_csv(out / "runs.csv", ["train_fraction", "run", "seed"] + [f"aupr_{m}" for m in methods], run_rows)
    _write_csv(
        out / "summary.csv",
        ["train_fraction"] + [c for m in methods for c in (f"mean_{m}", f"std_{m}")],
        summary_rows,
    )
    _write_csv(out / "pr_curves.csv", ["method", "train_fraction", "run", "rank", "recall", "precision"], curve_rows)

    split = SplitSpec(args.train_fractions[0], args.runs, args.seed)
    for flag, fn, col in (("sweep_rank", sweep_factors, "rank"), ("sweep_relations", sweep_relations, "relations")):
        values = getattr(args, flag)
        if not values:
            continue
        rows = []
        for m in methods:
            for v, res in fn(tensor, labels, split, values, params, m):
                rows.append([m, v, _fmt(split.train_fraction), _fmt(res.mean_aupr), _fmt(res.std_aupr)])
        _write_csv(out / f"{flag}.csv", ["method", col, "train_fraction", "mean_aupr", "std_aupr"], rows)

    for srow in summary_rows:
        cells = [f"s={float(srow[0]):.2f}"]
        for mi, m in enumerate(methods):
            cells.append(f"{m}: {float(srow[1 + 2 * mi]):.4f} +/- {float(srow[2 + 2 * mi]):.4f}")
        print("  ".join(cells))


def cmd_synth(args):
    spec = SynthSpec(
        n_per_class=args.n_per_class,
        n_relations=args.relations,
        p_intra=args.p_intra if len(args.p_intra) > 1 else args.p_intra[0],
        p_inter=args.p_inter if len(args.p_inter) > 1 else args.p_inter[0],
        seed=args.seed,
    )
    tensor, labels = generate_planted(spec)
    entities = EntityIndex(f"n{i}" for i in range(tensor.n_entities))
    relations = EntityIndex(f"r{k}" for k in range(tensor.n_relations))
    write_triples(args.out / "triples.tsv", tensor, entities, relations)
    write_labels(args.out / "labels.tsv", labels, entities)
    print(f"wrote {tensor.nnz} triples over {tensor.n_entities} entities -> {args.out}")


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ClassRescalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        args.func(args)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
