"""Command line interface.

    pawpkit synth        --spec synth.yaml --out DIR
    pawpkit ingest-check --config run.yaml
    pawpkit preprocess   --config run.yaml
    pawpkit bin          --config run.yaml
    pawpkit train        --config run.yaml
    pawpkit evaluate     --config run.yaml
    pawpkit dca          --config run.yaml [--model FAMILY@RES]
    pawpkit run          --config run.yaml
    pawpkit report       --config run.yaml | --out DIR

Exit codes: 0 success, 2 configuration error, 3 data error,
4 runtime or numerical failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline, plots, synth
from .audit import LeakageAudit
from .config import load_config
from .errors import ConfigError, DataError, PawpkitError
from .evaluation import dca_curve
from .svm import predict_proba

log = logging.getLogger("pawpkit")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _outdir(config) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args) -> int:
    spec = synth.load_synth_spec(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    truth = synth.generate(spec, args.out)
    print(f"synthesized {spec.n_subjects} subjects into {args.out} "
          f"({truth['n_corrupted']} corrupted)")
    return EXIT_OK


def cmd_ingest_check(args) -> int:
    config = load_config(args.config)
    config.require_inputs()
    info = pipeline.ingest_check(config)
    if info["subjects"] == 0:
        print("manifest is empty: 0 subjects (valid header)")
    else:
        print(f"ok: {info['subjects']} subjects, {info['landmark_records']} landmark "
              f"records, {info['tabular_features']} tabular features, "
              f"{info['phases']} temporal phases")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    config = load_config(args.config).require_inputs()
    outdir = _outdir(config)
    pre = pipeline.preprocess(config)
    if not pre.subject_ids:
        raise DataError("no usable subjects after preprocessing")
    pipeline.write_split(outdir / "split.csv", pre)
    pipeline.write_preprocessed(pre, outdir)
    print(f"preprocessed {len(pre.subject_ids)} subjects "
          f"({len(pre.train_ids)} train / {len(pre.test_ids)} test) "
          f"at resolutions {sorted(config.resolutions)}; "
          f"{len(pre.exclusions)} exclusion(s)")
    for sid, modality, reason in pre.exclusions:
        print(f"  excluded {sid} ({modality}): {reason}")
    return EXIT_OK


def cmd_bin(args) -> int:
    config = load_config(args.config).require_inputs()
    outdir = _outdir(config)
    pre = pipeline.load_preprocessed(outdir, config)
    audit = LeakageAudit(pre.train_ids, pre.test_ids)
    _, chosen, history, survivors = pipeline.run_binning(pre, config, audit)
    audit.verify()
    pipeline.write_binning_history(outdir / "binning_history.csv", history)
    (outdir / "survivors.txt").write_text("\n".join(survivors) + "\n", encoding="utf-8")
    print(f"binning removed {chosen} bin(s); {len(survivors)} of "
          f"{len(pre.train_ids)} training samples kept")
    return EXIT_OK


def _load_survivors(outdir: Path, pre) -> list:
    path = outdir / "survivors.txt"
    if not path.exists():
        log.warning("no survivors.txt found; training on the full training split")
        return list(pre.train_ids)
    keep = [line.strip() for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()]
    known = set(pre.train_ids)
    bad = [sid for sid in keep if sid not in known]
    if bad:
        raise DataError(f"survivors.txt lists non-training subjects: {', '.join(bad[:5])}")
    return keep


def cmd_train(args) -> int:
    config = load_config(args.config).require_inputs()
    outdir = _outdir(config)
    pre = pipeline.load_preprocessed(outdir, config)
    survivors = _load_survivors(outdir, pre)
    audit = LeakageAudit(pre.train_ids, pre.test_ids)
    roster = pipeline.build_model_roster(include_trimodal_late=config.include_trimodal_late)
    models_dir = outdir / "models"
    grid_dir = outdir / "grid_search"
    models_dir.mkdir(exist_ok=True)
    grid_dir.mkdir(exist_ok=True)
    block_cache: dict = {}
    index = {"selected": None, "models": {}}
    trained: dict = {}
    for resolution in sorted(config.resolutions):
        for spec in roster:
            fam = pipeline.fit_family(spec, resolution, pre, survivors, config,
                                      audit=audit, block_cache=block_cache)
            pipeline.save_family(models_dir / f"{spec.name}_{resolution}.npz", fam)
            pipeline.write_grid_search(grid_dir / f"{spec.name}_{resolution}.csv",
                                       fam.cv_table)
            trained[(spec.name, resolution)] = fam
            index["models"][fam.name] = {
                "file": f"{spec.name}_{resolution}.npz",
                "cv_mean_auc": fam.cv_mean_auc,
                "best_c": fam.best_c,
            }
    audit.verify()
    audit.write(outdir / "audit.json")
    selected = pipeline.select_best_model(
        [(name, res, fam.cv_mean_auc) for (name, res), fam in trained.items()], roster
    )
    best_model = trained[selected]
    index["selected"] = best_model.name
    (models_dir / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
    pipeline.write_grid_search(outdir / "grid_search.csv", best_model.cv_table)
    print(f"trained {len(index['models'])} models; selected {best_model.name} "
          f"(mean CV AUC {best_model.cv_mean_auc:.4f})")
    return EXIT_OK


def _load_model_index(outdir: Path) -> dict:
    index_path = outdir / "models" / "index.json"
    if not index_path.exists():
        raise DataError(f"{index_path}: no trained models found; run the train stage first")
    return json.loads(index_path.read_text(encoding="utf-8"))


def cmd_evaluate(args) -> int:
    config = load_config(args.config).require_inputs()
    outdir = _outdir(config)
    pre = pipeline.load_preprocessed(outdir, config)
    index = _load_model_index(outdir)
    roster_order = {spec.name: i for i, spec in enumerate(
        pipeline.build_model_roster(include_trimodal_late=config.include_trimodal_late))}
    reports = []
    for name in sorted(index["models"],
                       key=lambda n: (int(n.split("@")[1]),
                                      roster_order.get(n.split("@")[0], 99))):
        fam = pipeline.load_family(outdir / "models" / index["models"][name]["file"])
        report, _, _ = pipeline.evaluate_family(fam, pre, config)
        reports.append(report)
    pipeline.write_report(outdir / "report.csv", reports)
    print(f"evaluated {len(reports)} models on {len(pre.test_ids)} test subjects "
          f"-> {outdir / 'report.csv'}")
    return EXIT_OK


def cmd_dca(args) -> int:
    config = load_config(args.config).require_inputs()
    outdir = _outdir(config)
    pre = pipeline.load_preprocessed(outdir, config)
    index = _load_model_index(outdir)
    name = args.model or index["selected"]
    if name not in index["models"]:
        raise ConfigError(f"unknown model {name!r}; choose from "
                          f"{', '.join(sorted(index['models']))}")
    fam = pipeline.load_family(outdir / "models" / index["models"][name]["file"])
    test_rows = pre.test_rows
    features = fam.features(pre, test_rows)
    probs = predict_proba(fam.classifier, features)
    curve = dca_curve(probs, pre.labels[test_rows])
    pipeline.write_dca(outdir / "dca_curve.csv", curve)
    print(f"DCA for {name}: flagged-band margin {curve.flagged_band():+.4f} "
          f"-> {outdir / 'dca_curve.csv'}")
    return EXIT_OK


def cmd_run(args) -> int:
    config = load_config(args.config).require_inputs()
    result = pipeline.run_pipeline(config)
    outdir = Path(config.output_dir)
    plots.render_report(outdir)
    best = max(result.reports, key=lambda r: r.auc)
    print(f"run complete: {len(result.reports)} models, "
          f"{result.chosen_bins_removed} bin(s) removed, "
          f"selected {result.selected[0]}@{result.selected[1]}, "
          f"best test AUC {best.auc:.4f} ({best.model}@{best.resolution})")
    print(f"artifacts in {outdir}")
    return EXIT_OK


def cmd_report(args) -> int:
    if args.out:
        outdir = Path(args.out)
    elif args.config:
        outdir = Path(load_config(args.config).output_dir)
    else:
        raise ConfigError("report needs --out or --config")
    produced = plots.render_report(outdir)
    summary = (outdir / "summary.txt").read_text(encoding="utf-8")
    print(summary.rstrip())
    print("figures: " + ", ".join(str(p) for p in produced))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pawpkit",
        description="Tensor-based multimodal pipeline for wedge-pressure classification",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--spec", required=True, help="synth spec YAML")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.set_defaults(func=cmd_synth)

    for name, func, help_text in (
        ("ingest-check", cmd_ingest_check, "validate manifest, landmarks, tensor files"),
        ("preprocess", cmd_preprocess, "normalize, register, downsample, split"),
        ("bin", cmd_bin, "uncertainty binning with the CV-AUC stop rule"),
        ("train", cmd_train, "fit every model family at every resolution"),
        ("evaluate", cmd_evaluate, "test-set metrics for all trained models"),
        ("run", cmd_run, "full pipeline end to end"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="run config YAML")
        p.set_defaults(func=func)

    p = sub.add_parser("dca", help="decision curve for one trained model")
    p.add_argument("--config", required=True)
    p.add_argument("--model", default=None, help="FAMILY@RESOLUTION (default: selected)")
    p.set_defaults(func=cmd_dca)

    p = sub.add_parser("report", help="render figures + summary from emitted CSVs")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None, help="run directory (overrides --config)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PawpkitError as exc:
        print(f"pipeline failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # numerical or unexpected failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
