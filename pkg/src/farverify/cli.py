"""Command-line entry point wiring the modules into reproducible pipelines.

Exit codes are stable: 0 success, 1 validation findings, 2 usage error,
3 data error. Every command echoes its effective configuration as one
JSON line on stderr (suppressed by --quiet) so runs can be audited and
reproduced. All outputs are deterministic given identical inputs and
flags; --threads only caps internal workers and never changes results.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import clustering, corpus, metrics, synth, trials
from .errors import (
    ConfigInvalid,
    InvalidSweep,
    KTooLarge,
    ToolkitError,
)

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_USAGE = 2
EXIT_DATA = 3

_USAGE_ERRORS = (ConfigInvalid, KTooLarge, InvalidSweep)


def _echo_config(args: argparse.Namespace, command: str, extra: dict | None = None) -> None:
    if getattr(args, "quiet", False):
        return
    payload = {
        k: v for k, v in vars(args).items() if k not in ("func", "quiet") and v is not None
    }
    if extra:
        payload.update(extra)
    print(json.dumps({"command": command, "config": payload}, sort_keys=True), file=sys.stderr)


def _write(path: str, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_score(args) -> int:
    enroll = corpus.load_embeddings(args.enroll_emb)
    test = enroll if args.test_emb == args.enroll_emb else corpus.load_embeddings(args.test_emb)
    pairs = corpus.load_trials(args.trials)
    _echo_config(args, "score")
    records = metrics.score_trials(enroll, test, pairs, sub_mean=args.sub_mean)
    _write(args.out_scores, corpus.format_scores(records))
    if args.report:
        labeled = all(p.label is not None for p in pairs)
        if not labeled:
            raise ConfigInvalid("--report needs labeled trials")
        manifest = corpus.load_manifest(args.manifest) if args.manifest else None
        if manifest is not None or all(p.tags for p in pairs):
            report = metrics.stratified_report(records, pairs, manifest, _dcf_params(args))
        else:
            curve = metrics.det_curve(records, pairs)
            best = metrics.min_dcf_detail(curve, _dcf_params(args))
            overall = metrics.StratumMetrics(
                metrics.eer(curve), best.value, best.threshold, curve.n_target, curve.n_nontarget
            )
            report = metrics.MetricsReport(
                overall.eer, overall.min_dcf, overall.threshold,
                overall.n_target, overall.n_nontarget, {"overall": overall},
            )
        _write(args.report, metrics.report_to_json(report))
        if not args.quiet:
            print(metrics.format_report_table(report), end="")
    return EXIT_OK


def _dcf_params(args) -> metrics.DcfParams:
    return metrics.DcfParams(
        p_tar=getattr(args, "p_tar", 0.01),
        c_miss=getattr(args, "c_miss", 1.0),
        c_fa=getattr(args, "c_fa", 1.0),
        normalize=not getattr(args, "no_normalize", False),
    )


def cmd_eval(args) -> int:
    records = corpus.load_scores(args.scores)
    pairs = corpus.load_trials(args.trials)
    manifest = corpus.load_manifest(args.manifest) if args.manifest else None
    _echo_config(args, "eval")
    params = _dcf_params(args)
    if manifest is not None or all(p.tags for p in pairs):
        report = metrics.stratified_report(records, pairs, manifest, params)
    else:
        curve = metrics.det_curve(records, pairs)
        best = metrics.min_dcf_detail(curve, params)
        overall = metrics.StratumMetrics(
            metrics.eer(curve), best.value, best.threshold, curve.n_target, curve.n_nontarget
        )
        report = metrics.MetricsReport(
            overall.eer, overall.min_dcf, overall.threshold,
            overall.n_target, overall.n_nontarget, {"overall": overall},
        )
    _write(args.report, metrics.report_to_json(report))
    if args.det_csv:
        curve = metrics.det_curve(records, pairs)
        _write(args.det_csv, metrics.det_to_csv(curve))
    if not args.quiet:
        print(metrics.format_report_table(report), end="")
    return EXIT_OK


def cmd_sweep(args) -> int:
    embeddings = corpus.load_embeddings(args.embeddings)
    if args.k_max > len(embeddings):
        raise KTooLarge(f"--k-max {args.k_max} exceeds corpus size {len(embeddings)}")
    k_values = list(range(args.k_min, args.k_max + 1, args.k_step))
    _echo_config(args, "sweep", {"k_values": k_values})
    seed = args.seed if args.seed is not None else 0
    result = clustering.sweep(
        embeddings, k_values, seed=seed, max_iter=args.max_iter,
        tol=args.tol, restarts=args.restarts,
    )
    _write(args.out, clustering.format_sweep_csv(result))
    if args.elbow_out:
        elbow = clustering.detect_elbow(result)
        _write(args.elbow_out, _elbow_json(result, elbow))
    return EXIT_OK


def _elbow_json(result: clustering.SweepResult, elbow: clustering.ElbowResult) -> str:
    return json.dumps(
        {
            "k": elbow.k,
            "low_confidence": elbow.low_confidence,
            "k_values": list(result.k_values),
            "distances": list(elbow.distances),
        },
        indent=2,
    ) + "\n"


def cmd_cluster(args) -> int:
    embeddings = corpus.load_embeddings(args.embeddings)
    if args.k > len(embeddings):
        raise KTooLarge(f"--k {args.k} exceeds corpus size {len(embeddings)}")
    _echo_config(args, "cluster")
    seed = args.seed if args.seed is not None else 0
    model = clustering.kmeans(
        embeddings, args.k, seed=seed, max_iter=args.max_iter,
        tol=args.tol, restarts=args.restarts,
    )
    labels = clustering.assign_pseudo_labels(embeddings, model)
    _write(args.out_labels, clustering.format_labels(labels))
    if args.out_model:
        _write(args.out_model, clustering.format_cluster_model(model))
    summary = {"k": model.k, "objective": model.objective,
               "wccs": clustering.wccs(embeddings, model), "n_iter": model.n_iter}
    if args.truth:
        summary["nmi"] = clustering.nmi(labels, synth.load_truth(args.truth))
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_refine(args) -> int:
    if args.embeddings:
        embeddings = corpus.load_embeddings(args.embeddings)
        truth = synth.load_truth(args.truth) if args.truth else None
        refresher = lambda labels: embeddings  # no model to fine-tune: identity
    else:
        cfg = (
            synth.load_synth_config(args.synth_config, seed=args.seed)
            if args.synth_config
            else synth.SynthConfig(seed=args.seed if args.seed is not None else synth.SynthConfig().seed)
        )
        corpus_ = synth.gen_corpus(cfg)
        embeddings = corpus_.embeddings
        truth = dict(corpus_.truth)
        refresher = synth.oracle_refresher(corpus_, shrink=args.shrink)
    k_values = list(range(args.k_min, args.k_max + 1, args.k_step))
    if k_values and k_values[-1] > len(embeddings):
        raise KTooLarge(f"--k-max {args.k_max} exceeds corpus size {len(embeddings)}")
    _echo_config(args, "refine", {"k_values": k_values})
    seed = args.seed if args.seed is not None else 0
    rounds = clustering.refine_loop(
        embeddings, refresher, rounds=args.rounds, k_values=k_values,
        seed=seed, restarts=args.restarts,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for rr in rounds:
        _write(str(out / f"labels_round{rr.round}.tsv"), clustering.format_labels(rr.labels))
        _write(str(out / f"sweep_round{rr.round}.csv"), clustering.format_sweep_csv(rr.sweep))
        _write(str(out / f"elbow_round{rr.round}.json"), _elbow_json(rr.sweep, rr.elbow))
        _write(str(out / f"model_round{rr.round}.txt"), clustering.format_cluster_model(rr.model))
        entry = {"round": rr.round, "chosen_k": rr.elbow.k,
                 "low_confidence": rr.elbow.low_confidence,
                 "objective": rr.model.objective}
        if truth is not None:
            entry["nmi"] = clustering.nmi(rr.labels, truth)
        summary.append(entry)
    _write(str(out / "summary.json"), json.dumps({"rounds": summary}, indent=2) + "\n")
    print(json.dumps({"rounds": summary}, sort_keys=True))
    return EXIT_OK


def cmd_trials(args) -> int:
    manifest = corpus.load_manifest(args.manifest)
    cfg = (
        trials.load_trial_config(args.config, seed=args.seed)
        if args.config
        else trials.TrialConfig(seed=args.seed if args.seed is not None else 0)
    )
    _echo_config(args, "trials", {"effective": asdict(cfg)})
    pairs, stats = trials.generate_with_stats(manifest, cfg)
    _write(args.out, corpus.format_trials(pairs))
    if args.stats:
        _write(args.stats, trials.stats_to_json(stats))
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = (
        synth.load_synth_config(args.config, seed=args.seed)
        if args.config
        else synth.SynthConfig(seed=args.seed if args.seed is not None else synth.SynthConfig().seed)
    )
    _echo_config(args, "synth", {"effective": {
        **{k: v for k, v in asdict(cfg).items() if k not in ("channel_offsets", "distance_noise")},
        "channel_offsets": dict(cfg.channel_offsets),
        "distance_noise": dict(cfg.distance_noise),
    }})
    corpus_ = synth.gen_corpus(cfg)
    paths = synth.save_corpus(corpus_, args.out_dir)
    print(json.dumps(paths, sort_keys=True))
    return EXIT_OK


def cmd_validate(args) -> int:
    manifest = corpus.load_manifest(args.manifest)
    pairs = corpus.load_trials(args.trials)
    _echo_config(args, "validate")
    violations = trials.validate_trials(pairs, manifest)
    for v in violations:
        print(f"line {v.index + 1}: {v.kind}: {v.message}")
    print(f"{len(violations)} violation(s) in {len(pairs)} trial(s)")
    return EXIT_FINDINGS if violations else EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--threads", type=int, default=1,
                        help="worker cap; results never depend on it")
    common.add_argument("--quiet", action="store_true", help="suppress config echo")

    parser = argparse.ArgumentParser(
        prog="farverify",
        description="Far-field speaker verification evaluation and pseudo-labeling toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", parents=[common], help="cosine-score a trial list")
    p.add_argument("--enroll-emb", required=True)
    p.add_argument("--test-emb", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--out-scores", required=True)
    p.add_argument("--sub-mean", action="store_true",
                   help="subtract the corpus mean before normalization")
    p.add_argument("--report", default=None, help="write metrics JSON here")
    p.add_argument("--manifest", default=None)
    _add_dcf_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", parents=[common], help="metrics from existing score files")
    p.add_argument("--scores", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--report", required=True)
    p.add_argument("--det-csv", default=None, help="write the DET curve as CSV")
    _add_dcf_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="K-means sweep with WCCS per K")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--k-min", type=int, default=40)
    p.add_argument("--k-max", type=int, default=200)
    p.add_argument("--k-step", type=int, default=10)
    p.add_argument("--restarts", type=int, default=clustering.DEFAULT_RESTARTS)
    p.add_argument("--max-iter", type=int, default=clustering.DEFAULT_MAX_ITER)
    p.add_argument("--tol", type=float, default=clustering.DEFAULT_TOL)
    p.add_argument("--out", required=True, help="sweep CSV (k,wccs,objective)")
    p.add_argument("--elbow-out", default=None, help="write chosen-K JSON here")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("cluster", parents=[common], help="K-means at a fixed K")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--restarts", type=int, default=clustering.DEFAULT_RESTARTS)
    p.add_argument("--max-iter", type=int, default=clustering.DEFAULT_MAX_ITER)
    p.add_argument("--tol", type=float, default=clustering.DEFAULT_TOL)
    p.add_argument("--out-labels", required=True)
    p.add_argument("--out-model", default=None)
    p.add_argument("--truth", default=None, help="truth TSV; adds NMI to the summary")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("refine", parents=[common],
                       help="iterated sweep+cluster pseudo-labeling demo")
    p.add_argument("--embeddings", default=None,
                   help="external embeddings (identity refresher)")
    p.add_argument("--synth-config", default=None,
                   help="synthetic corpus config (oracle refresher)")
    p.add_argument("--truth", default=None)
    p.add_argument("--rounds", type=int, default=clustering.DEFAULT_ROUNDS)
    p.add_argument("--shrink", type=float, default=0.5)
    p.add_argument("--k-min", type=int, default=40)
    p.add_argument("--k-max", type=int, default=200)
    p.add_argument("--k-step", type=int, default=10)
    p.add_argument("--restarts", type=int, default=clustering.DEFAULT_RESTARTS)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("trials", parents=[common], help="generate a trial protocol")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--out", required=True)
    p.add_argument("--stats", default=None, help="write protocol stats JSON here")
    p.set_defaults(func=cmd_trials)

    p = sub.add_parser("synth", parents=[common], help="generate the synthetic corpus")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", parents=[common], help="check a protocol for violations")
    p.add_argument("--trials", required=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_validate)

    return parser


def _add_dcf_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--p-tar", type=float, default=0.01)
    p.add_argument("--c-miss", type=float, default=1.0)
    p.add_argument("--c-fa", type=float, default=1.0)
    p.add_argument("--no-normalize", action="store_true",
                   help="report the raw minimum detection cost")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"farverify {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ToolkitError as exc:
        print(f"farverify {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"farverify {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
