"""Command-line front end: parameter counting, fitting, rank reports,
bound verification, scheme/init ablations, and checkpoint inspection.

Conventions shared by every subcommand:

* scheme syntax is `a,b|c,d` (mode sizes left/right of the split), with
  `n^m` shorthand for m equal modes and `J1|c,d` for one-sided
  tensorization; a bare group like `2^24` needs an explicit --split;
* a JSON config file may supply any flag (keys use underscores), with
  explicit command-line flags taking precedence;
* whenever a command writes files, the fully resolved configuration is
  written next to them, and rerunning with the same configuration
  reproduces every CSV byte for byte;
* exit codes: 0 success, 2 bad configuration, 3 training divergence,
  4 a verified bound reported "violated", 5 missing artifact.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .adapters import (
    CheckpointError,
    FrozenFactorStore,
    hira_param_count,
    init_tera,
    load_checkpoint,
    lora_param_count,
    save_checkpoint,
    synthetic_base_weight,
    tera_param_count,
    trainable_param_count,
    vera_full_rank_param_count,
    vera_param_count,
    vera_rank_for_budget,
)
from .analysis import (
    rank_report,
    verify_expressivity_bound,
    verify_param_bound,
    verify_rank_bound,
    write_bound_report_json,
    write_rank_report_csv,
    write_rank_report_json,
    InstanceRejected,
)
from .tensor_ops import TensorizationScheme
from .training import (
    DivergenceError,
    OptimizerConfig,
    build_adapter,
    fit_mlp_adapt,
    fit_recovery,
    gaussian_recovery_task,
    make_mlp_adapt_task,
    planted_recovery_task,
    write_loss_csv,
    write_report_json,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_VIOLATED = 4
EXIT_MISSING = 5

CONFIG_FORMAT_VERSION = 1


class CliError(Exception):
    """Carries the exit code alongside the message."""

    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def parse_shape(text):
    try:
        j1, j2 = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise CliError(EXIT_CONFIG, f"bad shape {text!r}; expected like 64x64")
    if j1 < 2 or j2 < 2:
        raise CliError(EXIT_CONFIG, f"shape dimensions must be >= 2, got {text!r}")
    return j1, j2


def _expand_group(group, spec):
    # "64,2^3,8" -> [64, 2, 2, 2, 8]
    sizes = []
    for token in group.split(","):
        token = token.strip()
        if not token:
            raise CliError(EXIT_CONFIG, f"empty mode token in scheme {spec!r}")
        if "^" in token:
            base_s, _, count_s = token.partition("^")
            try:
                base, count = int(base_s), int(count_s)
            except ValueError:
                raise CliError(EXIT_CONFIG, f"bad mode token {token!r} in {spec!r}")
            if count < 1:
                raise CliError(EXIT_CONFIG, f"bad repeat count in {token!r}")
            sizes.extend([base] * count)
        else:
            try:
                sizes.append(int(token))
            except ValueError:
                raise CliError(EXIT_CONFIG, f"bad mode token {token!r} in {spec!r}")
    return sizes


def parse_scheme(spec, split=None):
    """Parse the scheme mini-language into a full-rank tensorization."""
    if "|" in spec:
        left_s, _, right_s = spec.partition("|")
        left = _expand_group(left_s, spec)
        right = _expand_group(right_s, spec)
        mode_sizes = left + right
        split_at = len(left)
    else:
        mode_sizes = _expand_group(spec, spec)
        if split is None:
            raise CliError(
                EXIT_CONFIG, f"scheme {spec!r} has no '|'; pass --split as well"
            )
        split_at = split
    try:
        return TensorizationScheme(tuple(mode_sizes), split=split_at)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"invalid scheme {spec!r}: {exc}")


def format_scheme(scheme: TensorizationScheme) -> str:
    left = ",".join(str(m) for m in scheme.mode_sizes[: scheme.split])
    right = ",".join(str(m) for m in scheme.mode_sizes[scheme.split :])
    return f"{left}|{right}"


def _require_match(scheme, j1, j2):
    if not scheme.matches(j1, j2):
        raise CliError(
            EXIT_CONFIG,
            f"scheme {format_scheme(scheme)} tensorizes "
            f"{scheme.rows}x{scheme.cols}, not {j1}x{j2}",
        )


def _require(args, *names):
    # requiredness is enforced here, not by argparse, so that a --config
    # file can supply any of these
    for name in names:
        if getattr(args, name, None) in (None, []):
            flag = "--" + name.replace("_", "-")
            raise CliError(EXIT_CONFIG, f"{flag} is required (flag or config file)")


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_resolved_config(out_dir, command, args):
    resolved = {"format_version": CONFIG_FORMAT_VERSION, "command": command}
    skip = {"func", "config"}
    for key, value in sorted(vars(args).items()):
        if key in skip or key == "command":
            continue
        if isinstance(value, Path):
            value = str(value)
        resolved[key] = value
    with open(out_dir / "resolved_config.json", "w") as fh:
        json.dump(resolved, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_csv(path, header, rows):
    # scheme strings contain commas, so fields are quoted as needed;
    # floats go through repr so reruns are byte-identical
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [repr(c) if isinstance(c, float) else c for c in row]
            )


def _print_table(rows, header):
    widths = [
        max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))
    ]
    for row in [header] + rows:
        print("  ".join(str(cell).ljust(w) for cell, w in zip(row, widths)).rstrip())


# ---------------------------------------------------------------- param-count


def cmd_param_count(args):
    _require(args, "shape", "scheme")
    j1, j2 = parse_shape(args.shape)
    scheme = parse_scheme(args.scheme, args.split)
    _require_match(scheme, j1, j2)
    rank = args.rank
    rows = [
        ("tera", tera_param_count(scheme), format_scheme(scheme)),
        ("tera_iden", tera_param_count(scheme), format_scheme(scheme)),
        ("lora", lora_param_count(j1, j2, rank), f"r={rank}"),
        ("vera", vera_param_count(j1, rank), f"r={rank}"),
        ("vera_full_rank", vera_full_rank_param_count(j1, j2), "r=min(J1,J2)"),
        ("hira", hira_param_count(j1, j2, rank), f"r={rank}"),
    ]
    _print_table([list(r) for r in rows], ["family", "params", "detail"])
    if args.out:
        out = _out_dir(args)
        _write_csv(out / "param_counts.csv", ["family", "params", "detail"], rows)
        write_resolved_config(out, "param-count", args)
    return EXIT_OK


# ------------------------------------------------------------------------ fit


def _optimizer_config(args):
    return OptimizerConfig(
        algorithm=args.optimizer,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        warmup_steps=args.warmup_steps,
        max_steps=args.max_steps,
        seed=args.opt_seed,
    )


def _resolve_vera_budget(args, j1):
    """--match-budget-of tera:SCHEME sets the rank to the matching budget."""
    prefix, _, spec = args.match_budget_of.partition(":")
    if prefix != "tera" or not spec:
        raise CliError(
            EXIT_CONFIG,
            f"bad --match-budget-of {args.match_budget_of!r}; expected tera:SCHEME",
        )
    budget = tera_param_count(parse_scheme(spec, args.split))
    rank = vera_rank_for_budget(j1, budget)
    achieved = vera_param_count(j1, rank)
    if abs(achieved - budget) > 1:
        raise CliError(
            EXIT_CONFIG,
            f"cannot match budget {budget} with row dimension {j1} "
            f"(closest is {achieved})",
        )
    return rank


def _fit_recovery(args, out):
    j1, j2 = parse_shape(args.shape)
    if args.scheme:
        scheme = parse_scheme(args.scheme, args.split)
        _require_match(scheme, j1, j2)
    else:
        try:
            scheme = TensorizationScheme.one_sided(j1, j2, 4)
        except ValueError as exc:
            raise CliError(EXIT_CONFIG, f"no default scheme for {j1}x{j2}: {exc}")
    store = FrozenFactorStore(args.master_seed)
    rank = args.rank
    if args.match_budget_of:
        if args.family != "vera":
            raise CliError(EXIT_CONFIG, "--match-budget-of only applies to vera")
        rank = _resolve_vera_budget(args, j1)

    w0 = None
    if args.family == "hira":
        w0 = synthetic_base_weight(j1, j2, args.w0_seed)
    adapter = build_adapter(
        args.family, j1, j2,
        store=store, scheme=scheme, rank=rank, seed=args.adapter_seed, w0=w0,
    )
    if args.family == "hira":
        # regenerable from the seed, so record that instead of the values
        adapter.w0_provenance = {"kind": "synthetic", "seed": args.w0_seed}

    if args.target == "planted":
        task = planted_recovery_task(scheme, store, seed=args.target_seed)
    else:
        task = gaussian_recovery_task(j1, j2, seed=args.target_seed)

    cfg = _optimizer_config(args)
    try:
        report = fit_recovery(adapter, task, cfg)
    except DivergenceError as exc:
        if exc.report is not None:
            write_report_json(exc.report, out / "report.json")
            write_loss_csv(exc.report, out / "loss.csv")
        write_resolved_config(out, "fit", args)
        raise CliError(
            EXIT_DIVERGED,
            f"diverged at step {exc.step} (loss {exc.loss:.3e}); "
            f"partial report written to {out}",
        )
    write_report_json(report, out / "report.json")
    write_loss_csv(report, out / "loss.csv")
    save_checkpoint(adapter, out / "checkpoint.json")
    write_resolved_config(out, "fit", args)
    print(f"family={args.family} params={report.trainable_param_count}")
    print(f"final_loss={report.final_loss!r}")
    print(
        "final_relative_residual="
        f"{report.metrics['final_relative_residual']!r}"
    )
    return EXIT_OK


def _mlp_task_regen_kwargs(args):
    return {
        "layer_sizes": [int(s) for s in args.layer_sizes.split(",")],
        "n_classes": args.n_classes,
        "n_train": args.n_train,
        "n_test": args.n_test,
        "seed": args.task_seed,
        "pretrain_steps": args.pretrain_steps,
    }


def _fit_mlp(args, out):
    kwargs = _mlp_task_regen_kwargs(args)
    kwargs["layer_sizes"] = tuple(kwargs["layer_sizes"])
    task = make_mlp_adapt_task(**kwargs)
    store = FrozenFactorStore(args.master_seed)
    scheme = parse_scheme(args.scheme, args.split) if args.scheme else None
    cfg = _optimizer_config(args)
    try:
        report, adapters = fit_mlp_adapt(
            task, args.family, cfg,
            store=store, scheme=scheme, rank=args.rank,
            adapter_seed=args.adapter_seed,
        )
    except DivergenceError as exc:
        if exc.report is not None:
            write_report_json(exc.report, out / "report.json")
            write_loss_csv(exc.report, out / "loss.csv")
        write_resolved_config(out, "fit", args)
        raise CliError(
            EXIT_DIVERGED,
            f"diverged at step {exc.step} (loss {exc.loss:.3e}); "
            f"partial report written to {out}",
        )
    write_report_json(report, out / "report.json")
    write_loss_csv(report, out / "loss.csv")
    for layer, adapter in adapters.items():
        if args.family == "hira":
            # make the checkpoint self-describing: the base weight can be
            # regenerated by rebuilding the task
            adapter.w0_provenance = {
                "kind": "mlp_layer",
                "layer": layer,
                "task": _mlp_task_regen_kwargs(args),
            }
        save_checkpoint(adapter, out / f"checkpoint_layer{layer}.json")
    write_resolved_config(out, "fit", args)
    print(f"family={args.family} params={report.trainable_param_count}")
    print(f"base_target_accuracy={report.metrics['base_target_accuracy']!r}")
    print(f"target_test_accuracy={report.metrics['target_test_accuracy']!r}")
    return EXIT_OK


def cmd_fit(args):
    _require(args, "family", "out")
    if args.task not in ("recovery", "mlp"):
        raise CliError(EXIT_CONFIG, f"unknown task {args.task!r}")
    out = _out_dir(args)
    if args.task == "mlp":
        return _fit_mlp(args, out)
    return _fit_recovery(args, out)


# ---------------------------------------------------------------- rank-report


def _load_any_checkpoint(path, task_cache):
    """Load a checkpoint of any family, regenerating frozen parts."""
    if not path.exists():
        raise CliError(EXIT_MISSING, f"checkpoint not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"corrupt checkpoint {path}: {exc}")
    kind = doc.get("adapter_type")
    store = None
    base_weight = None
    if kind in ("tera", "vera"):
        store = FrozenFactorStore(doc["master_seed"])
    if kind == "hira":
        provenance = (doc.get("w0") or {}).get("provenance")
        if provenance and provenance.get("kind") == "mlp_layer":
            key = json.dumps(provenance["task"], sort_keys=True)
            if key not in task_cache:
                kwargs = dict(provenance["task"])
                kwargs["layer_sizes"] = tuple(kwargs["layer_sizes"])
                task_cache[key] = make_mlp_adapt_task(**kwargs)
            base_weight = task_cache[key].base_weights[provenance["layer"]]
    try:
        adapter = load_checkpoint(path, store=store, base_weight=base_weight)
    except CheckpointError as exc:
        raise CliError(EXIT_CONFIG, f"cannot load {path}: {exc}")
    family = kind
    if kind == "tera" and doc.get("identity_factors"):
        family = "tera_iden"
    return adapter, family


def cmd_rank_report(args):
    _require(args, "checkpoints", "out")
    out = _out_dir(args)
    labels = args.labels.split(",") if args.labels else None
    if labels and len(labels) != len(args.checkpoints):
        raise CliError(
            EXIT_CONFIG,
            f"{len(labels)} labels for {len(args.checkpoints)} checkpoints",
        )
    entries = []
    task_cache = {}
    for i, raw in enumerate(args.checkpoints):
        path = Path(raw)
        adapter, family = _load_any_checkpoint(path, task_cache)
        layer = labels[i] if labels else path.stem
        entries.append((layer, family, adapter))
    report = rank_report(entries, rel_tol=args.rel_tol)
    write_rank_report_csv(report, out / "ranks.csv")
    write_rank_report_json(report, out / "ranks.json")
    write_resolved_config(out, "rank-report", args)
    _print_table(
        [
            [r["layer"], r["family"], r["rank"], r["max_rank"]]
            for r in report.rows
        ],
        ["layer", "family", "rank", "max_rank"],
    )
    return EXIT_OK


# --------------------------------------------------------------------- verify


def _verify_rank(args, out):
    scheme = parse_scheme(args.scheme, args.split) if args.scheme else (
        TensorizationScheme((4, 4, 4, 4), split=2)
    )
    report = verify_rank_bound(scheme, trials=args.trials, seed=args.seed)
    write_bound_report_json(report, out / "rank_bound.json")
    print(
        f"rank_bound: {report.verdict} "
        f"(max rank {report.terms['max_rank_observed']} vs bound {int(report.rhs)}, "
        f"full-rank fraction {report.terms['full_rank_fraction']:.4f})"
    )
    return report.verdict


def _verify_params(args, out):
    j1, j2 = parse_shape(args.shape) if args.shape else (4096, 4096)
    report = verify_param_bound(j1, j2, limit=args.enumeration_limit)
    write_bound_report_json(report, out / "param_count_bound.json")
    print(
        f"param_count_bound: {report.verdict} "
        f"({report.terms['n_schemes']} schemes, min params "
        f"{report.terms['min_params']}, cap {int(report.rhs)})"
    )
    return report.verdict


def _verify_expressivity(args, out):
    scheme = parse_scheme(args.scheme, args.split) if args.scheme else (
        TensorizationScheme((2, 4, 2, 4), split=2)
    )
    j1, j2 = scheme.rows, scheme.cols
    rng = np.random.default_rng(args.seed)
    holds = inconclusive = rejected = 0
    reports = []
    attempts = 0
    while len(reports) < args.instances:
        attempts += 1
        if attempts > 10 * args.instances:
            raise CliError(
                EXIT_CONFIG, "too many rejected instances; check the scheme"
            )
        master_seed = int(rng.integers(2**31))
        store = FrozenFactorStore(master_seed)
        adapter = init_tera(j1, j2, scheme, store)
        if args.planted:
            w_star = planted_recovery_task(
                scheme, store, seed=int(rng.integers(2**31))
            ).target
        else:
            w_star = rng.standard_normal((j1, j2))
        try:
            report = verify_expressivity_bound(
                w_star, adapter, sweeps=args.sweeps, seed=master_seed
            )
        except InstanceRejected:
            rejected += 1
            continue
        reports.append(report)
        if report.verdict == "holds":
            holds += 1
        elif report.verdict == "inconclusive":
            inconclusive += 1
    summary = {
        "format_version": CONFIG_FORMAT_VERSION,
        "bound_id": "expressivity_bound",
        "instances": args.instances,
        "holds": holds,
        "inconclusive": inconclusive,
        "violated": sum(1 for r in reports if r.verdict == "violated"),
        "rejected": rejected,
        "planted": bool(args.planted),
        "reports": [r.to_json_dict() for r in reports],
    }
    with open(out / "expressivity_bound.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    lines = ["instance,verdict,lhs,rhs,slack"]
    lines += [
        f"{i},{r.verdict},{float(r.lhs)!r},{float(r.rhs)!r},{float(r.slack)!r}"
        for i, r in enumerate(reports)
    ]
    (out / "expressivity_instances.csv").write_text("\n".join(lines) + "\n")
    print(
        f"expressivity_bound: holds {holds}/{args.instances}, "
        f"inconclusive {inconclusive}, rejected {rejected}"
    )
    return "violated" if summary["violated"] else "holds"


def cmd_verify(args):
    _require(args, "bound", "out")
    if args.bound not in ("rank", "params", "expressivity", "all"):
        # config-file values bypass argparse choices
        raise CliError(EXIT_CONFIG, f"unknown bound {args.bound!r}")
    out = _out_dir(args)
    verdicts = []
    if args.bound in ("rank", "all"):
        verdicts.append(_verify_rank(args, out))
    if args.bound in ("params", "all"):
        verdicts.append(_verify_params(args, out))
    if args.bound in ("expressivity", "all"):
        verdicts.append(_verify_expressivity(args, out))
    write_resolved_config(out, "verify", args)
    if "violated" in verdicts:
        raise CliError(EXIT_VIOLATED, "at least one bound reported violated")
    return EXIT_OK


# --------------------------------------------------------------------- ablate


def cmd_ablate(args):
    _require(args, "schemes", "shape", "out")
    out = _out_dir(args)
    j1, j2 = parse_shape(args.shape)
    families = [f.strip() for f in args.families.split(",") if f.strip()]
    cfg = _optimizer_config(args)
    rows = []
    for spec in args.schemes:
        try:
            scheme = parse_scheme(spec, args.split)
            _require_match(scheme, j1, j2)
        except CliError as exc:
            print(f"skipping scheme {spec!r}: {exc}", file=sys.stderr)
            continue
        for family in families:
            if family not in ("tera", "tera_iden"):
                print(
                    f"skipping family {family!r}: ablation sweeps the "
                    "tensor-network variants",
                    file=sys.stderr,
                )
                continue
            residuals = []
            params = None
            for t in range(args.targets):
                store = FrozenFactorStore(args.master_seed)
                adapter = build_adapter(
                    family, j1, j2, store=store, scheme=scheme,
                    seed=args.adapter_seed,
                )
                params = trainable_param_count(adapter)
                task = gaussian_recovery_task(j1, j2, seed=args.target_seed + t)
                report = fit_recovery(adapter, task, cfg)
                residuals.append(report.metrics["final_relative_residual"])
            rows.append(
                (format_scheme(scheme), family, params,
                 float(np.mean(residuals)))
            )
    _write_csv(
        out / "ablation.csv",
        ["scheme", "family", "params", "mean_final_relative_residual"],
        rows,
    )
    write_resolved_config(out, "ablate", args)
    _print_table(
        [[s, f, p, f"{m:.6f}"] for s, f, p, m in rows],
        ["scheme", "family", "params", "mean_residual"],
    )
    return EXIT_OK


# --------------------------------------------------------- checkpoint inspect


def cmd_checkpoint_inspect(args):
    path = Path(args.path)
    adapter, family = _load_any_checkpoint(path, {})
    doc = json.loads(path.read_text())
    print(f"file: {path}")
    print(f"format_version: {doc['format_version']}")
    print(f"family: {family}")
    print(f"shape: {adapter.shape[0]}x{adapter.shape[1]}")
    print(f"trainable_params: {trainable_param_count(adapter)}")
    if family in ("tera", "tera_iden"):
        print(f"scheme: {format_scheme(adapter.scheme)}")
        print(f"master_seed: {adapter.master_seed}")
        print(f"zero_init_mode: {adapter.zero_init_mode}")
        norms = ",".join(f"{float(np.linalg.norm(d)):.6g}" for d in adapter.d_vectors)
        print(f"d_vector_norms: {norms}")
    elif family == "vera":
        print(f"rank: {adapter.rank}")
        print(f"master_seed: {adapter.master_seed}")
    else:
        print(f"rank: {adapter.rank}")
    if family == "hira" and adapter.w0_provenance:
        print(f"w0_provenance: {json.dumps(adapter.w0_provenance, sort_keys=True)}")
    return EXIT_OK


# ----------------------------------------------------------------- the parser


def _add_optimizer_flags(p):
    p.add_argument("--optimizer", default="adamw", choices=["adamw", "sgd-momentum"])
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--warmup-steps", type=int, default=100)
    p.add_argument("--max-steps", type=int, default=1000)
    p.add_argument("--opt-seed", type=int, default=0)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        default=None,
        help="JSON file of flag defaults (underscored keys); flags override",
    )
    parser = argparse.ArgumentParser(
        prog="tera",
        description="Tensor-network adapters: fitting, rank analysis, "
        "and bound verification at desk scale.",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("param-count", help="trainable-parameter table", parents=[common])
    p.add_argument("--shape", default=None, help="like 4096x4096")
    p.add_argument("--scheme", default=None, help="like 64,64|64,64 or 2^24")
    p.add_argument("--split", type=int, default=None)
    p.add_argument("--rank", type=int, default=8, help="r for lora/vera/hira rows")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_param_count)

    p = sub.add_parser("fit", help="train one adapter configuration", parents=[common])
    p.add_argument("--task", default="recovery", choices=["recovery", "mlp"])
    p.add_argument(
        "--family",
        default=None,
        choices=["tera", "tera_iden", "lora", "vera", "hira"],
    )
    p.add_argument("--shape", default="64x64")
    p.add_argument("--scheme", default=None)
    p.add_argument("--split", type=int, default=None)
    p.add_argument("--rank", type=int, default=8)
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--adapter-seed", type=int, default=0)
    p.add_argument("--w0-seed", type=int, default=0)
    p.add_argument("--target", default="gaussian", choices=["gaussian", "planted"])
    p.add_argument("--target-seed", type=int, default=0)
    p.add_argument(
        "--match-budget-of",
        default=None,
        metavar="tera:SCHEME",
        help="set the vera rank so budgets match within one parameter",
    )
    p.add_argument("--layer-sizes", default="64,64,64,64")
    p.add_argument("--n-classes", type=int, default=8)
    p.add_argument("--n-train", type=int, default=1024)
    p.add_argument("--n-test", type=int, default=512)
    p.add_argument("--task-seed", type=int, default=0)
    p.add_argument("--pretrain-steps", type=int, default=300)
    _add_optimizer_flags(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("rank-report", help="rank table from checkpoints", parents=[common])
    p.add_argument("checkpoints", nargs="*", default=None)
    p.add_argument("--labels", default=None, help="comma list, one per checkpoint")
    p.add_argument("--rel-tol", type=float, default=1e-8)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_rank_report)

    p = sub.add_parser("verify", help="run the numerical bound verifiers", parents=[common])
    p.add_argument(
        "--bound",
        default=None,
        choices=["rank", "params", "expressivity", "all"],
    )
    p.add_argument("--trials", type=int, default=1000, help="rank bound trials")
    p.add_argument("--scheme", default=None)
    p.add_argument("--split", type=int, default=None)
    p.add_argument("--shape", default=None, help="params bound shape")
    p.add_argument("--enumeration-limit", type=int, default=10_000)
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--sweeps", type=int, default=50)
    p.add_argument("--planted", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("ablate", help="scheme/init sweep on recovery targets", parents=[common])
    p.add_argument("--schemes", nargs="*", default=None)
    p.add_argument("--split", type=int, default=None)
    p.add_argument("--families", default="tera,tera_iden")
    p.add_argument("--shape", default="64x64")
    p.add_argument("--targets", type=int, default=5)
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--adapter-seed", type=int, default=0)
    p.add_argument("--target-seed", type=int, default=0)
    _add_optimizer_flags(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("checkpoint", help="checkpoint utilities", parents=[common])
    ck_sub = p.add_subparsers(dest="checkpoint_command", required=True)
    pi = ck_sub.add_parser("inspect", help="print checkpoint summary", parents=[common])
    pi.add_argument("path")
    pi.set_defaults(func=cmd_checkpoint_inspect)

    # subparsers parse into a fresh namespace, so config-file defaults must
    # be planted on each of them, not just on the root parser
    parser._tera_parsers = [parser] + [
        sub.choices[name] for name in sub.choices
    ] + [ck_sub.choices[name] for name in ck_sub.choices]
    return parser


def _apply_config_file(parser, argv):
    # cheap pre-scan so config values act as defaults that flags override
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config", default=None)
    known, _ = probe.parse_known_args(argv)
    if known.config is None:
        return
    path = Path(known.config)
    if not path.exists():
        raise CliError(EXIT_MISSING, f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"bad config file {path}: {exc}")
    if not isinstance(doc, dict):
        raise CliError(EXIT_CONFIG, f"config file {path} must hold a JSON object")
    doc.pop("format_version", None)
    doc.pop("command", None)
    defaults = {k.replace("-", "_"): v for k, v in doc.items()}
    for p in parser._tera_parsers:
        p.set_defaults(**defaults)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ValueError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
