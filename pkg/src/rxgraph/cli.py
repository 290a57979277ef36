"""Command-line pipeline: generate -> ingest -> gram -> train -> evaluate,
plus export-embeddings.

Every run resolves its configuration from three layers (built-in defaults,
then an optional ``key=value`` config file, then command-line flags, flags
winning) and writes the fully resolved result next to its outputs, so any
artifact can be regenerated from the file sitting beside it.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .evaluate import ExperimentConfig, export_embeddings, run_experiment
from .graphs import build_patient_graph
from .kernels import (
    GramError,
    KernelKind,
    gram_matrix,
    gram_to_csv,
    psd_check,
    read_gram,
    write_gram,
)
from .net import NetConfig, TrainingDivergedError, load_net, save_net, train
from .records import DataFormatError, label_cohort, read_demographics, read_disease_spec, read_records
from .synth import CohortSpec, PRESETS, generate_cohort, write_cohort

log = logging.getLogger("rxgraph")

PSD_TOLERANCE_PER_N = 1e-8
GRAM_FILES = {"wl_subtree": "wl.kgrm", "temporal_topological": "tp.kgrm", "vertex_histogram": "vh.kgrm"}


class UsageError(Exception):
    """Bad flags or config values: exit code 2."""


class NumericError(RuntimeError):
    """Numerical failure (PSD violation, divergence): exit code 4."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """Flat bag of every knob any subcommand reads."""

    seed: int = 0
    out: str = "."
    threads: int = 1
    data: str | None = None
    events: str | None = None
    demographics: str | None = None
    disease: str | None = None
    grams: str | None = None
    model: str | None = None
    preset: str | None = None
    n: int = 200
    ratio: float = 0.5
    kind: str = "short_term"
    signal: float = 0.5
    vocab: int = 30
    events_min: int = 8
    events_max: int = 16
    wl_h: int = 2
    alpha: float = 0.05
    embed_dim: int = 64
    fusion_dim: int = 16
    classifier_dim: int | None = None
    margin: float = 1.0
    metric: str = "both"
    learning_rate: float = 0.001
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 20
    folds: int = 5
    balance: str = "both"
    gram_csv: bool = False


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_FIELD_PARSERS = {
    "int": int,
    "float": float,
    "str": str,
    "bool": _parse_bool,
    "int | None": int,
    "str | None": str,
}


def _config_schema() -> dict[str, object]:
    # annotations are source strings here (future import), keyed verbatim
    return {field.name: _FIELD_PARSERS[field.type] for field in dataclasses.fields(RunConfig)}


def parse_config_file(path: str | Path) -> dict:
    """Read ``key = value`` lines; unknown keys are errors, not typos."""
    schema = _config_schema()
    values: dict[str, object] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise UsageError(f"config file {path}: not valid UTF-8 ({exc})") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"config file {path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in schema:
            raise UsageError(f"config file {path}:{lineno}: unknown key {key!r}")
        if key in values:
            raise UsageError(f"config file {path}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = schema[key](value)
        except ValueError as exc:
            raise UsageError(f"config file {path}:{lineno}: bad value for {key}: {exc}") from None
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """defaults <- config file <- flags (flags win)."""
    merged = dataclasses.asdict(RunConfig())
    if getattr(args, "config", None):
        merged.update(parse_config_file(args.config))
    for key in merged:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            merged[key] = flag_value
    config = RunConfig(**merged)
    if config.threads < 1:
        raise UsageError(f"--threads must be >= 1, got {config.threads}")
    if config.metric not in ("both", "euclidean", "cosine"):
        raise UsageError(f"--metric must be both|euclidean|cosine, got {config.metric!r}")
    if config.balance not in ("both", "balanced", "imbalanced", "imbalanced_70_30"):
        raise UsageError(f"--balance must be both|balanced|imbalanced, got {config.balance!r}")
    return config


def write_resolved_config(config: RunConfig, out_dir: Path, command: str) -> Path:
    lines = [f"# resolved configuration for `rxgraph {command}`"]
    for field in dataclasses.fields(RunConfig):
        value = getattr(config, field.name)
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{field.name} = {value}")
    path = out_dir / f"{command}.resolved.cfg"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# shared plumbing


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _force_single_thread(config: RunConfig, what: str) -> None:
    if config.threads > 1:
        log.info("%s is sequential to stay deterministic; ignoring --threads %d", what, config.threads)


def _data_paths(config: RunConfig) -> tuple[Path, Path | None, Path]:
    base = Path(config.data) if config.data else None
    events = Path(config.events) if config.events else (base / "events.tsv" if base else None)
    if events is None:
        raise UsageError("no input events: pass --data DIR or --events FILE")
    disease = Path(config.disease) if config.disease else (base / "disease.cfg" if base else None)
    if disease is None:
        raise UsageError("no disease definition: pass --data DIR or --disease FILE")
    if config.demographics:
        demographics = Path(config.demographics)
    else:
        demographics = base / "demographics.tsv" if base else None
        if demographics is not None and not demographics.exists():
            demographics = None  # optional when only implied by --data
    return events, demographics, disease


def _load_cases(config: RunConfig):
    events, demographics, disease = _data_paths(config)
    demo_map = read_demographics(demographics) if demographics is not None else None
    records = read_records(events, demo_map)
    cases = label_cohort(records, read_disease_spec(disease))
    if not cases:
        raise DataFormatError(f"{events}: no case matched the disease definition")
    return cases


def _write_cases_manifest(path: Path, cases) -> None:
    lines = [f"{c.record.patient_id}\t{c.label}\t{c.index_day}" for c in cases]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_cases_manifest(path: Path) -> tuple[list[str], np.ndarray]:
    ids: list[str] = []
    labels: list[int] = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        parts = raw.split("\t")
        if len(parts) != 3:
            raise DataFormatError(f"{path}: expected 3 tab-separated fields", lineno)
        try:
            label = int(parts[1])
        except ValueError:
            raise DataFormatError(f"{path}: label is not an integer: {parts[1]!r}", lineno) from None
        if label not in (0, 1):
            raise DataFormatError(f"{path}: label must be 0 or 1, got {label}", lineno)
        ids.append(parts[0])
        labels.append(label)
    if not ids:
        raise DataFormatError(f"{path}: empty case manifest")
    return ids, np.array(labels)


def _grams_dir(config: RunConfig) -> Path:
    return Path(config.grams) if config.grams else Path(config.out)


def _read_gram_triple(grams_dir: Path):
    grams = []
    for name in ("wl_subtree", "temporal_topological", "vertex_histogram"):
        grams.append(read_gram(grams_dir / GRAM_FILES[name]))
    n = grams[0].n
    if any(g.n != n for g in grams):
        raise GramError(f"{grams_dir}: the three gram files disagree on N")
    return grams


def _load_model(path: Path):
    try:
        return load_net(path)
    except ValueError as exc:  # corrupt container is a data problem, not usage
        raise DataFormatError(str(exc)) from exc


def _net_config(config: RunConfig, metric: str) -> NetConfig:
    classifier_dim = config.classifier_dim if config.classifier_dim is not None else config.fusion_dim
    return NetConfig(
        embed_dim_per_kernel=config.embed_dim,
        fusion_dim=config.fusion_dim,
        classifier_dim=classifier_dim,
        margin_lambda=config.margin,
        metric=metric,
        learning_rate=config.learning_rate,
        batch_size=config.batch_size,
        max_epochs=config.max_epochs,
        early_stop_patience=config.patience,
        seed=config.seed,
    )


def _metric_tuple(config: RunConfig) -> tuple[str, ...]:
    return ("euclidean", "cosine") if config.metric == "both" else (config.metric,)


def _balance_tuple(config: RunConfig) -> tuple[str, ...]:
    if config.balance == "both":
        return ("balanced", "imbalanced_70_30")
    if config.balance in ("imbalanced", "imbalanced_70_30"):
        return ("imbalanced_70_30",)
    return ("balanced",)


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(config: RunConfig) -> int:
    overrides = dict(
        signal_strength=config.signal,
        vocab_size=config.vocab,
        events_per_case=(config.events_min, config.events_max),
        seed=config.seed,
    )
    try:
        if config.preset is not None:
            spec = CohortSpec.from_preset(config.preset, config.n, **overrides)
        else:
            spec = CohortSpec(n_cases=config.n, failure_ratio=config.ratio, kind=config.kind, **overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cases = generate_cohort(spec)
    out = _out_dir(config)
    paths = write_cohort(out, cases, spec)
    write_resolved_config(config, out, "generate")
    n_fail = sum(c.label for c in cases)
    log.info(
        "generated %d cases (%d failures, %d successes) into %s",
        len(cases), n_fail, len(cases) - n_fail, out,
    )
    for name, path in paths.items():
        log.info("  %s: %s", name, path)
    return 0


def cmd_ingest(config: RunConfig) -> int:
    cases = _load_cases(config)
    out = _out_dir(config)
    _write_cases_manifest(out / "cases.tsv", cases)
    write_resolved_config(config, out, "ingest")
    n_fail = sum(c.label for c in cases)
    log.info(
        "ingested %d cases (%d failures, %d successes) -> %s",
        len(cases), n_fail, len(cases) - n_fail, out / "cases.tsv",
    )
    return 0


def cmd_gram(config: RunConfig) -> int:
    _force_single_thread(config, "gram computation")
    cases = _load_cases(config)
    graphs = [build_patient_graph(c) for c in cases]
    out = _out_dir(config)
    kinds = (
        KernelKind.wl_subtree(config.wl_h),
        KernelKind.temporal_topological(config.alpha),
        KernelKind.vertex_histogram(),
    )
    for kind in kinds:
        gram = gram_matrix(kind, graphs)
        min_eig = psd_check(gram)
        log.info("%s gram: N=%d, min eigenvalue %.3e", kind.name, gram.n, min_eig)
        if min_eig < -PSD_TOLERANCE_PER_N * gram.n:
            raise NumericError(
                f"{kind.name} gram violates positive semidefiniteness: "
                f"min eigenvalue {min_eig:.3e} < {-PSD_TOLERANCE_PER_N * gram.n:.3e}"
            )
        path = out / GRAM_FILES[kind.name]
        write_gram(path, gram)
        log.info("  wrote %s", path)
        if config.gram_csv:
            (out / (path.stem + ".csv")).write_text(gram_to_csv(gram), encoding="utf-8")
    _write_cases_manifest(out / "cases.tsv", cases)
    write_resolved_config(config, out, "gram")
    return 0


def cmd_train(config: RunConfig) -> int:
    _force_single_thread(config, "training")
    if config.metric == "both":
        raise UsageError("train fits one model; pass --metric euclidean or --metric cosine")
    grams_dir = _grams_dir(config)
    grams = _read_gram_triple(grams_dir)
    ids, labels = _read_cases_manifest(grams_dir / "cases.tsv")
    if len(ids) != grams[0].n:
        raise DataFormatError(
            f"{grams_dir}: cases.tsv has {len(ids)} rows but grams are N={grams[0].n}"
        )
    try:
        net_config = _net_config(config, config.metric)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    net, trace = train(grams, labels, net_config)
    out = _out_dir(config)
    save_net(out / "model.knet", net)
    (out / "trace.csv").write_text(trace.to_csv(), encoding="utf-8")
    write_resolved_config(config, out, "train")
    final_loss = trace.joint[-1] if trace.joint else float("nan")
    log.info(
        "trained %s model on %d cases: stopped at epoch %d (%s), final joint loss %.6f",
        config.metric, len(ids), trace.stop_epoch, trace.stop_reason, final_loss,
    )
    log.info("  wrote %s and %s", out / "model.knet", out / "trace.csv")
    return 0


def cmd_evaluate(config: RunConfig) -> int:
    _force_single_thread(config, "evaluation")
    cases = _load_cases(config)
    try:
        experiment = ExperimentConfig(
            k=config.folds,
            seed=config.seed,
            metrics=_metric_tuple(config),
            balance_modes=_balance_tuple(config),
            wl_h=config.wl_h,
            alpha=config.alpha,
            embed_dim=config.embed_dim,
            fusion_dim=config.fusion_dim,
            margin_lambda=config.margin,
            learning_rate=config.learning_rate,
            batch_size=config.batch_size,
            max_epochs=config.max_epochs,
            early_stop_patience=config.patience,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(config)
    report = run_experiment(cases, experiment, export_dir=out)
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    write_resolved_config(config, out, "evaluate")
    log.info("evaluated %d cases; wrote %s and %s", len(cases), out / "report.json", out / "report.txt")
    sys.stdout.write(report.to_text())
    return 0


def cmd_export_embeddings(config: RunConfig) -> int:
    grams_dir = _grams_dir(config)
    grams = _read_gram_triple(grams_dir)
    ids, labels = _read_cases_manifest(grams_dir / "cases.tsv")
    model_path = Path(config.model) if config.model else grams_dir / "model.knet"
    net = _load_model(model_path)
    if net.n_train != grams[0].n:
        raise DataFormatError(
            f"{model_path}: model was trained on N={net.n_train} but grams are N={grams[0].n}"
        )
    rows = tuple(g.values for g in grams)
    csv = export_embeddings(net, rows, labels, ids, ["train"] * len(ids))
    out = _out_dir(config)
    (out / "embeddings.csv").write_text(csv, encoding="utf-8")
    write_resolved_config(config, out, "export-embeddings")
    log.info("wrote %s (%d rows)", out / "embeddings.csv", len(ids))
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="key=value config file (flags win)")
    parser.add_argument("--seed", type=int, metavar="U64")
    parser.add_argument("--out", metavar="DIR", help="output directory (default: current)")
    parser.add_argument("--threads", type=int, metavar="N",
                        help="worker threads where determinism allows; training forces 1")


def _add_data_inputs(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", metavar="DIR", help="directory holding events.tsv/demographics.tsv/disease.cfg")
    parser.add_argument("--events", metavar="FILE")
    parser.add_argument("--demographics", metavar="FILE")
    parser.add_argument("--disease", metavar="FILE")


def _add_kernel_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--wl-h", dest="wl_h", type=int, metavar="H")
    parser.add_argument("--alpha", type=float, metavar="A")


def _add_net_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--embed-dim", dest="embed_dim", type=int, metavar="N")
    parser.add_argument("--fusion-dim", dest="fusion_dim", type=int, metavar="F")
    parser.add_argument("--classifier-dim", dest="classifier_dim", type=int, metavar="F",
                        help="must equal --fusion-dim (defaults to it)")
    parser.add_argument("--margin", type=float, metavar="LAMBDA")
    parser.add_argument("--learning-rate", dest="learning_rate", type=float, metavar="LR")
    parser.add_argument("--batch-size", dest="batch_size", type=int, metavar="B")
    parser.add_argument("--max-epochs", dest="max_epochs", type=int, metavar="E")
    parser.add_argument("--patience", type=int, metavar="P")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rxgraph",
        description="Patient-graph kernels, metric-learned embeddings, and the evaluation protocol around them.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic cohort as data files")
    _add_common(p)
    p.add_argument("--preset", choices=sorted(PRESETS), help="reference cohort (sets ratio and kind)")
    p.add_argument("--n", type=int, metavar="N", help="number of cases")
    p.add_argument("--ratio", type=float, metavar="R", help="failure fraction in (0, 1)")
    p.add_argument("--kind", choices=("short_term", "chronic"))
    p.add_argument("--signal", type=float, metavar="S", help="label signal strength in [0, 1]")
    p.add_argument("--vocab", type=int, metavar="V", help="diagnosis/prescription vocabulary size")
    p.add_argument("--events-min", dest="events_min", type=int, metavar="LO")
    p.add_argument("--events-max", dest="events_max", type=int, metavar="HI")
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("ingest", help="label raw event files into a case manifest")
    _add_common(p)
    _add_data_inputs(p)
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("gram", help="build the three kernel gram matrices")
    _add_common(p)
    _add_data_inputs(p)
    _add_kernel_flags(p)
    p.add_argument("--gram-csv", dest="gram_csv", action="store_const", const=True,
                   help="additionally dump each gram as CSV")
    p.set_defaults(handler=cmd_gram)

    p = sub.add_parser("train", help="train one embedding model on precomputed grams")
    _add_common(p)
    p.add_argument("--grams", metavar="DIR", help="directory with wl/tp/vh.kgrm + cases.tsv (default: --out)")
    p.add_argument("--metric", choices=("euclidean", "cosine"))
    _add_net_flags(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("evaluate", help="run the full cross-validated comparison")
    _add_common(p)
    _add_data_inputs(p)
    _add_kernel_flags(p)
    _add_net_flags(p)
    p.add_argument("--metric", choices=("both", "euclidean", "cosine"))
    p.add_argument("--balance", choices=("both", "balanced", "imbalanced"))
    p.add_argument("--folds", type=int, metavar="K")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("export-embeddings", help="embed training cases with a saved model")
    _add_common(p)
    p.add_argument("--grams", metavar="DIR", help="directory with wl/tp/vh.kgrm + cases.tsv (default: --out)")
    p.add_argument("--model", metavar="FILE", help="model file (default: GRAMS/model.knet)")
    p.set_defaults(handler=cmd_export_embeddings)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = resolve_config(args)
        return args.handler(config)
    except UsageError as exc:
        log.error("usage error (%s): %s", args.command, exc)
        return 2
    except (DataFormatError, GramError) as exc:
        log.error("data error (%s): %s", args.command, exc)
        return 3
    except FileNotFoundError as exc:
        log.error("data error (%s): file not found: %s", args.command, exc.filename or exc)
        return 3
    except OSError as exc:
        log.error("data error (%s): %s", args.command, exc)
        return 3
    except (TrainingDivergedError, NumericError) as exc:
        log.error("numeric error (%s): %s", args.command, exc)
        return 4
    except ValueError as exc:
        log.error("usage error (%s): %s", args.command, exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
