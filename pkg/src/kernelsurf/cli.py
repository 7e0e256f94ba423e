"""Command-line front end: classification runs, mixing-time profiling,
standalone two-sample tests, and synthetic dataset generation."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .classifier import (
    ClassLibrary,
    PipelineConfig,
    Trial,
    apply_ablations,
    restrict_sources,
    run_benchmark,
)
from .dataset import (
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    read_manifest,
    save_dataset,
)
from .errors import ConfigError, ConstantStreamError, DataError, InputError
from .independence import MixingSearchConfig, minimum_independent_gap, mixing_report
from .mmd import two_sample_test
from .sampling import DataStream, SamplingSpec, draw_pair, prepare_stream
from .seeding import derive_rng

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DATA = 4


def _json_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _resolve_dataset(args) -> tuple[ClassLibrary, list[Trial], dict]:
    """Build (library, test trials, provenance echo) from CLI flags."""
    if args.manifest is not None:
        manifest = read_manifest(args.manifest)
        library, tests = load_dataset(manifest, Path(args.manifest).parent)
        dataset_echo = {"manifest": str(args.manifest), "name": manifest.name}
    else:
        if args.synthetic == "default":
            spec = SyntheticSpec(seed=args.seed)
        else:
            try:
                spec_data = json.loads(Path(args.synthetic).read_text())
            except json.JSONDecodeError as exc:
                raise DataError(f"synthetic spec {args.synthetic} is not valid JSON: {exc}")
            spec = SyntheticSpec.from_dict(spec_data)
            spec = replace(spec, seed=args.seed)
        library, tests = generate_synthetic(spec)
        dataset_echo = {"synthetic": spec.to_dict()}
    return library, tests, dataset_echo


def _parse_weights(text: str) -> dict[str, float]:
    out = {}
    for item in text.split(","):
        if not item:
            continue
        if "=" not in item:
            raise ConfigError(f"weight {item!r} must look like name=value")
        name, _, value = item.partition("=")
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"weight value {value!r} for {name!r} is not a number")
    return out


def _apply_overrides(library: ClassLibrary, tests: list[Trial], args):
    if args.sources:
        names = [s.strip() for s in args.sources.split(",") if s.strip()]
        library = restrict_sources(library, names)
        keep = set(names)
        tests = [
            Trial(t.trial_id, {s: v for s, v in t.sources.items() if s in keep},
                  t.label, t.user_id)
            for t in tests
        ]
    cfg = dict(library.source_config)
    if args.weights:
        for name, w in _parse_weights(args.weights).items():
            if name not in cfg:
                raise ConfigError(f"weight given for unknown source {name!r}")
            cfg[name] = replace(cfg[name], weight=w)
    if args.n is not None:
        cfg = {name: replace(s, sampling=replace(s.sampling, n=args.n))
               for name, s in cfg.items()}
    cfg = apply_ablations(cfg, no_hsv=args.no_hsv, no_dft=args.no_dft,
                          no_cross_user=args.no_cross_user)
    return ClassLibrary(library.classes, cfg), tests


def cmd_classify(args) -> int:
    library, tests, dataset_echo = _resolve_dataset(args)
    library, tests = _apply_overrides(library, tests, args)
    pipeline = PipelineConfig(repetitions=args.repetitions)
    result = run_benchmark(library, tests, pipeline, seed=args.seed,
                           k=args.k, jobs=args.jobs)
    report = result.report

    config_echo = {
        "command": "classify",
        "seed": args.seed,
        "alpha": args.alpha,
        "k": args.k,
        "repetitions": args.repetitions,
        "n_override": args.n,
        "dataset": dataset_echo,
        "sources": list(library.source_config),
        "ablations": {"no_hsv": args.no_hsv, "no_dft": args.no_dft,
                      "no_cross_user": args.no_cross_user},
        "source_config": {
            name: {
                "strategy": s.sampling.strategy,
                "n": s.sampling.n,
                "temporal_gap": s.sampling.temporal_gap,
                "spatial_gaps": list(s.sampling.spatial_gaps) if s.sampling.spatial_gaps else None,
                "frequency_cap": s.sampling.frequency_cap,
                "initial_window": s.sampling.initial_window,
                "cross_user": s.cross_user,
                "weight": s.weight,
                "shift_by_one": s.shift_by_one,
                "hsv": s.hsv,
            }
            for name, s in library.source_config.items()
        },
    }
    payload = {
        "config": config_echo,
        "report": report.to_json_dict(),
        "predictions": [
            {"user": p.user_id, "trial": p.trial_id,
             "actual": p.actual, "predicted": p.predicted}
            for p in result.predictions
        ],
        "ds_cache": {
            f"{t}|{label}|{qid}|{source}": value
            for (t, label, qid, source), value in sorted(result.ds_cache.items())
        },
    }
    Path(args.out_json).write_text(_json_dumps(payload))
    Path(args.out_csv).write_text(report.confusion_csv())
    print(f"accuracy: {report.accuracy_mean:.4f} +/- {report.accuracy_std:.4f} "
          f"over {len(report.fold_ids)} folds")
    print(f"macro precision: {report.macro_precision:.4f}")
    print(f"report: {args.out_json}  confusion: {args.out_csv}")
    return EXIT_OK


def cmd_mixing(args) -> int:
    library, _, dataset_echo = _resolve_dataset(args)
    source = args.source
    if source not in library.source_config:
        raise ConfigError(f"unknown source {source!r}; have {list(library.source_config)}")
    labels = [args.class_label] if args.class_label else library.labels
    results = {}
    skipped = {}
    rate = None
    for label in labels:
        if label not in library.classes:
            raise ConfigError(f"unknown class {label!r}")
        trials = library.classes[label]
        streams = [t.sources[source] for t in trials if source in t.sources]
        if len(streams) < 3:
            raise DataError(f"class {label!r} has {len(streams)} trials with source "
                            f"{source!r}; need at least 3")
        if streams[0].kind != "timeseries":
            raise ConfigError(f"source {source!r} is not a time series")
        rate = streams[0].rate
        t1_max = max(1, int(round(args.t1max * rate)))
        cfg = MixingSearchConfig(
            repetitions=args.repetitions, t1_max=t1_max, alpha=args.alpha,
            max_gap=args.max_gap, shuffles=args.shuffles,
            stride_growth=args.stride,
        )
        channels = range(streams[0].channels) if args.channel is None else [args.channel]
        for ch in channels:
            key = f"{label}/ch{ch}"
            realizations = np.stack([s.data[ch] for s in streams])
            rng = derive_rng(args.seed, 5, library.labels.index(label), ch)
            from .independence import RealizationSet

            try:
                results[key] = minimum_independent_gap(
                    RealizationSet(realizations, rate), cfg, rng)
            except ConstantStreamError as exc:
                skipped[key] = f"unsuitable for HSIC: {exc}"
    payload = mixing_report(results, rate) if results else {"sources": []}
    payload["skipped"] = skipped
    payload["config"] = {
        "command": "mixing", "source": source, "seed": args.seed,
        "repetitions": args.repetitions, "alpha": args.alpha,
        "t1max_seconds": args.t1max, "shuffles": args.shuffles,
        "max_gap": args.max_gap, "stride": args.stride,
        "dataset": dataset_echo,
    }
    for row in payload["sources"]:
        state = ("T* = %d samples (%.3f ms)" % (row["t_star_samples"], row["t_star_ms"])
                 if row["converged"] else
                 f"did not converge by gap {row.get('max_gap_reached')}")
        print(f"{row['source']}: {state}")
    for key, reason in skipped.items():
        print(f"{key}: {reason}")
    if args.out_json:
        Path(args.out_json).write_text(_json_dumps(payload))
        print(f"report: {args.out_json}")
    return EXIT_OK


def _load_stream_file(path: str, rate: float) -> DataStream:
    try:
        data = np.loadtxt(path, ndmin=2)
    except OSError:
        raise
    except ValueError as exc:
        raise DataError(f"cannot parse stream file {path}: {exc}")
    if data.size == 0:
        raise DataError(f"stream file {path} is empty")
    return DataStream.timeseries(data.T, rate, name=str(path))


def cmd_test(args) -> int:
    stream_y = _load_stream_file(args.file_y, args.rate)
    stream_z = _load_stream_file(args.file_z, args.rate)
    spec = SamplingSpec("equidistant_temporal", n=args.n, temporal_gap=args.gap)
    prep_y = prepare_stream(stream_y, spec)
    prep_z = prepare_stream(stream_z, spec)
    y, z = draw_pair(prep_y, prep_z, spec, derive_rng(args.seed, 2))
    result = two_sample_test(y, z, alpha=args.alpha, shuffles=args.shuffles,
                             rng=derive_rng(args.seed, 3))
    print(f"mmd2 = {result.mmd2:.6g}")
    print(f"threshold = {result.threshold:.6g} (alpha = {args.alpha})")
    print("distributions differ" if result.reject_null
          else "no evidence the distributions differ")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.spec == "default":
        spec = SyntheticSpec(seed=args.seed)
    else:
        try:
            spec = SyntheticSpec.from_dict(json.loads(Path(args.spec).read_text()))
        except json.JSONDecodeError as exc:
            raise DataError(f"spec file {args.spec} is not valid JSON: {exc}")
        spec = replace(spec, seed=args.seed)
    library, tests = generate_synthetic(spec)
    manifest_path = save_dataset(library, tests, args.out, name="synthetic")
    print(f"wrote dataset to {args.out}")
    print(f"manifest: {manifest_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kernelsurf",
        description="Kernel two-sample classification over heterogeneous data sources",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_dataset_flags(p):
        group = p.add_mutually_exclusive_group(required=True)
        group.add_argument("--manifest", help="path to a dataset manifest.json")
        group.add_argument("--synthetic",
                           help="'default' or a path to a synthetic spec JSON")

    p = sub.add_parser("classify", help="run the full classification benchmark")
    add_dataset_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sources", help="comma-separated subset of sources")
    p.add_argument("--weights", help="per-source weights: name=w,name=w")
    p.add_argument("--no-hsv", action="store_true", help="sample images in raw color space")
    p.add_argument("--no-dft", action="store_true",
                   help="sample vibration sources in the time domain")
    p.add_argument("--no-cross-user", action="store_true",
                   help="disable the cross-user mean compensation")
    p.add_argument("--repetitions", type=int, default=10, metavar="R")
    p.add_argument("--n", type=int, default=None, help="override points per draw")
    p.add_argument("--k", type=int, default=1, help="nearest neighbors for the vote")
    p.add_argument("--alpha", type=float, default=0.05, help="echoed into the report")
    p.add_argument("--jobs", type=int, default=None, help="parallel workers (default: cores)")
    p.add_argument("--out-json", default="report.json")
    p.add_argument("--out-csv", default="confusion.csv")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("mixing", help="profile minimum independent sample spacing")
    add_dataset_flags(p)
    p.add_argument("--source", required=True)
    p.add_argument("--class", dest="class_label", default=None,
                   help="restrict to one class label")
    p.add_argument("--channel", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repetitions", type=int, default=50, metavar="R")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--t1max", type=float, default=0.1,
                   help="start-window bound in seconds")
    p.add_argument("--shuffles", type=int, default=200, metavar="B")
    p.add_argument("--max-gap", type=int, default=None)
    p.add_argument("--stride", type=float, default=1.0,
                   help="geometric gap growth factor (1 = step by one sample)")
    p.add_argument("--out-json", default=None)
    p.set_defaults(func=cmd_mixing)

    p = sub.add_parser("test", help="two-sample test between two stream files")
    p.add_argument("file_y")
    p.add_argument("file_z")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--gap", type=int, default=None, help="temporal gap in samples")
    p.add_argument("--rate", type=float, default=1.0, help="sample rate in Hz")
    p.add_argument("--shuffles", type=int, default=1000, metavar="B")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("synth", help="materialize a synthetic dataset on disk")
    p.add_argument("--out", required=True)
    p.add_argument("--spec", default="default")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InputError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
