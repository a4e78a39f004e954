"""Command-line pipeline: generate, pretrain, transfer, estimate, compare.

Every command is reproducible byte-for-byte given the same inputs, flags and
seeds, and never partially overwrites an output (temp file + rename).  A
flat ``key=value`` config file can seed any flag's default; explicit flags
win.

Exit codes: 0 success, 2 usage error, 3 data error, 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import baselines as bl
from . import metrics
from .ensemble import (
    ACQUISITION_METHODS,
    DEFAULT_BUDGET_FRACTION,
    DEFAULT_MEMBERS,
    DEFAULT_THRESHOLD,
    INFERENCE_MODES,
    Ensemble,
    estimate_accuracy,
    load_ensemble,
    member_scores,
    pretrain_ensemble,
    save_ensemble,
    select_for_labeling,
    stream_estimate,
    transfer_ensemble,
)
from .mlp import NetArchitecture, NetFormatError, TrainConfig, default_hidden_dims
from .records import (
    UNLABELED,
    DataError,
    Dataset,
    correctness,
    load_dataset,
    save_dataset,
    true_accuracy,
)
from .synth import ScenarioSpec, generate
from .util import atomic_write


def _fraction(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError(f"{v} outside (0, 1]")
    return v


def _open_unit(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"{v} outside (0, 1)")
    return v


def _positive(kind):
    def parse(text: str):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
        if v <= 0:
            raise argparse.ArgumentTypeError(f"{v} must be > 0")
        return v

    return parse


def _hidden_dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad hidden dims {text!r}") from None
    if not dims or any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError(f"bad hidden dims {text!r}")
    return dims


def _write_report(path: str, rows: list[dict]) -> None:
    with atomic_write(path) as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _read_report(path: str) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: invalid JSON ({e.msg})") from None
    return rows


def _load_ids(path: str) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def _labeled_subset(user: Dataset, ids_path: str) -> Dataset:
    subset = user.subset_by_ids(_load_ids(ids_path))
    missing = [subset.ids[i] for i in range(len(subset)) if subset.labels[i] == UNLABELED]
    if missing:
        raise DataError(
            f"{len(missing)} selected record(s) lack labels, e.g. {missing[:5]}"
        )
    return subset


# -- commands ----------------------------------------------------------------


def cmd_gen(args) -> int:
    spec = ScenarioSpec(
        n=args.n,
        class_count=args.classes,
        target_acc=args.acc,
        margin_mean=args.margin_mean,
        margin_std=args.margin_std,
        wrong_margin_factor=args.wrong_margin_factor,
        underconfident_fraction=args.underconfident_fraction,
        overconfident_fraction=args.overconfident_fraction,
        temperature_distortion=args.distortion,
        null_fraction=args.null_fraction,
        seed=args.seed,
    )
    dataset = generate(spec)
    save_dataset(dataset, args.out, args.format)
    print(
        f"wrote {len(dataset)} records to {args.out} "
        f"(measured accuracy {true_accuracy(dataset):.4f}, seed {args.seed})"
    )
    return 0


def cmd_pretrain(args) -> int:
    reference = load_dataset(args.reference)
    hidden = args.hidden or default_hidden_dims(reference.class_count)
    arch = NetArchitecture(
        input_dim=reference.class_count,
        hidden_dims=hidden,
        dropout_rate=args.dropout,
        dropout_position=args.dropout_position,
    )
    config = TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    ensemble = pretrain_ensemble(
        reference,
        arch,
        members=args.members,
        config=config,
        master_seed=args.seed,
        inference_mode=args.inference_mode,
    )
    ensemble.threshold = args.threshold
    save_ensemble(ensemble, args.out)
    _write_report(
        f"{args.out}/losses.jsonl",
        [
            {"record": "pretrain_loss", "member": i, "loss": hist}
            for i, hist in enumerate(ensemble.train_history)
        ],
    )
    print(
        f"trained {ensemble.size} members on {len(reference)} reference records "
        f"-> {args.out} (master seed {args.seed})"
    )
    return 0


def cmd_transfer(args) -> int:
    ensemble = load_ensemble(args.ensemble)
    user = load_dataset(args.user)
    selected = select_for_labeling(ensemble, user, args.budget, args.acquisition)
    ids_out = args.ids_out or f"{args.ensemble}.selected-ids.txt"
    with atomic_write(ids_out) as fh:
        for rid in selected:
            fh.write(rid + "\n")

    unlabeled = [
        rid for rid in selected if user.labels[user.index_of(rid)] == UNLABELED
    ]
    if unlabeled:
        print(
            f"{len(unlabeled)} of {len(selected)} selected records need labels "
            f"before transfer; ids written to {ids_out}",
            file=sys.stderr,
        )
        for rid in unlabeled:
            print(rid, file=sys.stderr)
        return 3

    subset = user.subset_by_ids(selected)
    config = TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    transferred = transfer_ensemble(ensemble, subset, config)
    out = args.out or args.ensemble
    save_ensemble(transferred, out)
    print(
        f"labeled {len(selected)} records (budget {args.budget:g}), "
        f"transferred {transferred.size} members -> {out}; ids in {ids_out}"
    )
    return 0


def cmd_estimate(args) -> int:
    ensemble = load_ensemble(args.ensemble)
    user = load_dataset(args.user)
    subset = _labeled_subset(user, args.labeled_ids) if args.labeled_ids else None
    est = estimate_accuracy(
        ensemble,
        user,
        threshold=args.threshold,
        labeled_subset=subset,
        blend=not args.no_blend,
    )
    row = {"record": "estimate", "method": "monitor", "master_seed": ensemble.master_seed,
           "inference_mode": ensemble.inference_mode, "members": ensemble.size}
    row.update(est.to_dict())
    if args.report:
        _write_report(args.report, [row])
    print(
        f"estimated accuracy {est.estimate:.4f} "
        f"(ensemble mean {est.mean:.4f}, std {est.std:.4f}, threshold {est.threshold:g}, "
        f"{est.n_labeled} labeled / {est.n_monitored} monitored)"
    )
    if est.labeled_accuracy is not None:
        print(f"labeled-subset accuracy {est.labeled_accuracy:.4f}")
    return 0


def cmd_baselines(args) -> int:
    reference = load_dataset(args.reference)
    user = load_dataset(args.user)
    rows = []

    mp_cal = bl.calibrate_threshold(reference, "mp")
    rows.append(
        {
            "record": "estimate",
            "method": "MP",
            "threshold": mp_cal.threshold,
            "calibration_error": mp_cal.calibration_error,
            "estimate": bl.estimate_mp(user, mp_cal.threshold),
            "seed": args.seed,
        }
    )
    en_cal = bl.calibrate_threshold(reference, "entropy")
    rows.append(
        {
            "record": "estimate",
            "method": "Entropy",
            "threshold": en_cal.threshold,
            "calibration_error": en_cal.calibration_error,
            "estimate": bl.estimate_entropy(user, en_cal.threshold),
            "seed": args.seed,
        }
    )
    rows.append(
        {
            "record": "estimate",
            "method": "MP*",
            "estimate": bl.estimate_mp_star(user),
            "seed": args.seed,
        }
    )

    if args.ts_temperature is not None:
        temperature, nll, iterations, fit_n = args.ts_temperature, None, None, 0
    else:
        if args.labeled_ids:
            fit_set = _labeled_subset(user, args.labeled_ids)
        elif user.labeled_fraction == 1.0:
            fit_set = user
        else:
            raise DataError(
                "temperature scaling needs --labeled-ids or a fully labeled user set"
            )
        fit = bl.fit_temperature(fit_set)
        temperature, nll, iterations, fit_n = (
            fit.temperature,
            fit.nll,
            fit.iterations,
            len(fit_set),
        )
    rows.append(
        {
            "record": "estimate",
            "method": "TS",
            "temperature": temperature,
            "nll": nll,
            "fit_iterations": iterations,
            "fit_records": fit_n,
            "estimate": bl.estimate_ts(user, temperature),
            "seed": args.seed,
        }
    )

    if user.labeled_fraction == 1.0:
        rs = bl.estimate_rs(user, args.rs_budget, args.rs_repeats, args.seed)
        rows.append(
            {
                "record": "estimate",
                "method": "RS",
                "budget_fraction": args.rs_budget,
                "repeats": args.rs_repeats,
                "sample_size": rs.sample_size,
                "estimate": rs.mean,
                "min": rs.minimum,
                "max": rs.maximum,
                "per_run": list(rs.estimates),
                "seed": args.seed,
            }
        )
    else:
        print("user set not fully labeled: RS row omitted", file=sys.stderr)

    if args.report:
        _write_report(args.report, rows)
    for row in rows:
        extra = ""
        if "threshold" in row:
            extra = f" (threshold {row['threshold']:.6g})"
        elif "temperature" in row:
            extra = f" (temperature {row['temperature']:.6g})"
        elif "min" in row:
            extra = f" (range [{row['min']:.4f}, {row['max']:.4f}] over {row['repeats']} runs)"
        print(f"{row['method']:>8}: {row['estimate']:.4f}{extra}")
    return 0


def cmd_eval(args) -> int:
    user = load_dataset(args.user)
    labeled_mask = user.labels != UNLABELED
    if not labeled_mask.any():
        raise DataError("eval needs labels on the user set")
    if labeled_mask.all():
        eval_set = user
    else:
        eval_set = user.select(np.nonzero(labeled_mask)[0])
        print(
            f"user set only partially labeled: evaluating against the "
            f"{len(eval_set)} labeled records",
            file=sys.stderr,
        )
    truth = true_accuracy(eval_set)
    corr = correctness(eval_set)

    rows = [{"record": "eval", "true_accuracy": truth, "n": len(eval_set)}]
    estimates = []
    ts_temperature = None
    for path in args.reports:
        for row in _read_report(path):
            if row.get("record") != "estimate":
                continue
            method = row.get("method", "?")
            est = row.get("estimate")
            estimates.append((method, est))
            if method == "TS" and row.get("temperature") is not None:
                ts_temperature = float(row["temperature"])
    for method, est in estimates:
        rows.append(
            {
                "record": "eval",
                "method": method,
                "estimate": est,
                "true_accuracy": truth,
                "error": metrics.estimation_error(est, truth),
            }
        )

    aupr_inputs: list[tuple[str, np.ndarray]] = [
        ("MP", bl.mp_scores(eval_set)),
        ("Entropy", -bl.multiclass_entropies(eval_set)),
    ]
    if ts_temperature is not None:
        z = np.log(eval_set.probs + 1e-12) / ts_temperature
        z -= z.max(axis=1, keepdims=True)
        q = np.exp(z)
        q /= q.sum(axis=1, keepdims=True)
        aupr_inputs.append(("TS", q.max(axis=1)))
    if args.ensemble:
        ens = load_ensemble(args.ensemble)
        aupr_inputs.append(("monitor", member_scores(ens, eval_set).mean(axis=0)))

    if labeled_mask.all():
        for method, stat in aupr_inputs:
            rows.append(
                {"record": "aupr", "method": method, "aupr": metrics.aupr(stat, corr)}
            )
            if args.pr_dir:
                curve = metrics.pr_curve(stat, corr)
                metrics.write_pr_csv(curve, f"{args.pr_dir}/pr_{method.lower()}.csv")
    else:
        print("user set not fully labeled: AUPR rows omitted", file=sys.stderr)

    if args.out:
        _write_report(args.out, rows)
    print(f"true accuracy: {truth:.4f} over {len(eval_set)} records")
    for row in rows:
        if row.get("method") and "error" in row:
            print(f"{row['method']:>8}: estimate {row['estimate']:.4f} error {row['error']:.4f}")
    for row in rows:
        if row["record"] == "aupr":
            print(f"{row['method']:>8}: AUPR {row['aupr']:.4f}")
    return 0


def cmd_stream(args) -> int:
    ensemble = load_ensemble(args.ensemble)
    user = load_dataset(args.user)
    results = stream_estimate(
        ensemble,
        user,
        batch_size=args.batch_size,
        batches=args.batches,
        seed=args.seed,
        threshold=args.threshold,
    )
    with atomic_write(args.out) as fh:
        fh.write("batch,estimate,true_accuracy\n")
        for r in results:
            truth = "" if r.true_accuracy is None else repr(r.true_accuracy)
            fh.write(f"{r.index},{r.estimate!r},{truth}\n")
    tracked = [r for r in results if r.true_accuracy is not None]
    msg = f"wrote {len(results)} batch estimates to {args.out}"
    if tracked:
        mae = float(np.mean([abs(r.estimate - r.true_accuracy) for r in tracked]))
        msg += f" (mean absolute tracking error {mae:.4f})"
    print(msg)
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="accmon",
        description="Monitor the true accuracy of a deployed classifier "
        "from its softmax outputs.",
    )
    parser.add_argument(
        "--config",
        help="flat key=value file supplying flag defaults (flags win)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic softmax log")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=_positive(int), required=True)
    p.add_argument("--classes", type=_positive(int), required=True)
    p.add_argument("--acc", type=_fraction, required=True)
    p.add_argument("--margin-mean", type=_positive(float), default=ScenarioSpec.margin_mean)
    p.add_argument("--margin-std", type=float, default=ScenarioSpec.margin_std)
    p.add_argument(
        "--wrong-margin-factor", type=_positive(float), default=ScenarioSpec.wrong_margin_factor
    )
    p.add_argument(
        "--underconfident-fraction",
        type=float,
        default=ScenarioSpec.underconfident_fraction,
    )
    p.add_argument(
        "--overconfident-fraction",
        type=float,
        default=ScenarioSpec.overconfident_fraction,
    )
    p.add_argument("--distortion", type=_positive(float), default=1.0)
    p.add_argument("--null-fraction", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("jsonl", "csv"), default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("pretrain", help="train a monitor ensemble on a labeled reference")
    p.add_argument("--reference", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--members", type=_positive(int), default=DEFAULT_MEMBERS)
    p.add_argument("--hidden", type=_hidden_dims, default=None,
                   help="comma-separated widths (default by class count)")
    p.add_argument("--dropout", type=float, default=NetArchitecture.dropout_rate)
    p.add_argument("--dropout-position", type=int, default=NetArchitecture.dropout_position)
    p.add_argument("--epochs", type=_positive(int), default=TrainConfig.epochs)
    p.add_argument("--lr", type=_positive(float), default=TrainConfig.learning_rate)
    p.add_argument("--batch-size", type=_positive(int), default=TrainConfig.batch_size)
    p.add_argument("--inference-mode", choices=INFERENCE_MODES, default="deterministic")
    p.add_argument("--threshold", type=_open_unit, default=DEFAULT_THRESHOLD)
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("transfer", help="select records to label, then fine-tune")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--budget", type=_fraction, default=DEFAULT_BUDGET_FRACTION)
    p.add_argument("--acquisition", choices=ACQUISITION_METHODS, default="mean_entropy")
    p.add_argument("--out", default=None, help="output ensemble dir (default: in place)")
    p.add_argument("--ids-out", default=None)
    p.add_argument("--epochs", type=_positive(int), default=TrainConfig.epochs)
    p.add_argument("--lr", type=_positive(float), default=TrainConfig.learning_rate)
    p.add_argument("--batch-size", type=_positive(int), default=TrainConfig.batch_size)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("estimate", help="report the monitored accuracy estimate")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--threshold", type=_open_unit, default=None)
    p.add_argument("--labeled-ids", default=None)
    p.add_argument("--no-blend", action="store_true")
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("baselines", help="run the five baseline estimators")
    p.add_argument("--reference", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--labeled-ids", default=None,
                   help="labeled subset for the temperature fit")
    p.add_argument("--ts-temperature", type=_positive(float), default=None,
                   help="skip fitting and use this temperature")
    p.add_argument("--rs-budget", type=_fraction, default=DEFAULT_BUDGET_FRACTION)
    p.add_argument("--rs-repeats", type=_positive(int), default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_baselines)

    p = sub.add_parser("eval", help="score reports against a labeled user set")
    p.add_argument("--user", required=True)
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--ensemble", default=None, help="for the monitor AUPR row")
    p.add_argument("--out", default=None)
    p.add_argument("--pr-dir", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stream", help="batched streaming estimates")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--batch-size", type=_positive(int), default=500)
    p.add_argument("--batches", type=_positive(int), default=100)
    p.add_argument("--threshold", type=_open_unit, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stream)

    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Fold --config key=value pairs in as defaults; explicit flags win."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return argv
    pairs = {}
    with open(known.config, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{known.config}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            pairs[key.strip().replace("-", "_")] = value.strip()
    for action in parser._subparsers._group_actions[0].choices.values():  # type: ignore[union-attr]
        defaults = {}
        for act in action._actions:
            if act.dest not in pairs:
                continue
            raw = pairs[act.dest]
            defaults[act.dest] = act.type(raw) if act.type is not None else raw
            act.required = False  # satisfied by the config value
        action.set_defaults(**defaults)
    return argv


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    try:
        return args.func(args)
    except (DataError, NetFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except Exception as e:  # pragma: no cover - defensive
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
