"""Command-line surface for batch pipeline runs.

Subcommands mirror the pipeline stages: data build/split/pseudo-dims,
gen-expected, train, eval empathy/ser, stats wilcoxon, report table. Defaults
can be preloaded from a JSON file named by the RENUANCE_CONFIG environment
variable; explicit flags always win. Every command writes the resolved
configuration into its output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .adapter import AdapterConfig
from .datasets import (
    generate_pseudo_dimensional_labels,
    sample_msp,
    split_esd,
    split_iemocap,
    write_split_result,
)
from .encoders import EmotionEncoderHandle, SpeechEncoderConfig
from .evaluation import (
    SubprocessEmpathyScorer,
    evaluate_ser,
    heuristic_stub_scorer,
    respond_to_record,
    score_empathy,
    summarize,
    write_report_csv,
)
from .generators import HttpResponseGenerator, TemplateResponseGenerator
from .lm import LMConfig
from .manifest import load_manifest, write_manifest
from .stats import wilcoxon_signed_rank
from .training import (
    ModelConfig,
    OptimizerConfig,
    TrainConfig,
    attach_speech,
    build_default_tokenizer,
    generate_expected_responses,
    load_paired_set,
    load_state,
    train,
    write_paired_set,
)

CONFIG_ENV_VAR = "RENUANCE_CONFIG"


def _write_run_config(out_dir: Path, args: argparse.Namespace) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {k: str(v) if isinstance(v, Path) else v for k, v in vars(args).items() if k != "func"}
    resolved["version"] = __version__
    (out_dir / "run_config.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True), encoding="utf-8"
    )


def _cmd_data_build(args) -> int:
    manifest = load_manifest(args.manifest)
    out_dir = Path(args.out)
    _write_run_config(out_dir, args)
    write_manifest(out_dir / "manifest.jsonl", manifest)
    print(f"validated {len(manifest)} records -> {out_dir / 'manifest.jsonl'}")
    return 0


def _cmd_data_split(args) -> int:
    manifest = load_manifest(args.manifest)
    if args.rule == "iemocap":
        result = split_iemocap(manifest)
    elif args.rule == "esd":
        result = split_esd(manifest, train_ratio=args.train_ratio, seed=args.seed)
    else:
        result = sample_msp(manifest, n_train=args.n_train, n_test=args.n_test, seed=args.seed)
    out_dir = Path(args.out)
    _write_run_config(out_dir, args)
    sidecar = write_split_result(out_dir, result)
    print(f"split rule={result.rule} train={sidecar['counts']['train']} test={sidecar['counts']['test']}")
    return 0


def _cmd_data_pseudo(args) -> int:
    manifest = load_manifest(args.manifest)
    handle = EmotionEncoderHandle.from_seed(
        args.encoder_seed, emb_dim=args.emotion_dim, n_mels=args.emotion_mels,
        win_length=args.win_length, hop_length=args.hop_length,
    )
    labeled = generate_pseudo_dimensional_labels(manifest, handle)
    out_dir = Path(args.out)
    _write_run_config(out_dir, args)
    write_manifest(out_dir / "manifest.jsonl", labeled)
    n_pseudo = sum(1 for r in labeled if r.vad_source == "pseudo")
    print(f"pseudo-labeled {n_pseudo}/{len(labeled)} records -> {out_dir / 'manifest.jsonl'}")
    return 0


def _cmd_gen_expected(args) -> int:
    manifest = load_manifest(args.manifest)
    if args.generator == "fixture":
        generator = TemplateResponseGenerator()
    else:
        if not args.url:
            raise ValueError("--url is required for the external generator")
        generator = HttpResponseGenerator(url=args.url)
    paired = generate_expected_responses(manifest, generator)
    out_dir = Path(args.out)
    _write_run_config(out_dir, args)
    write_paired_set(out_dir / "paired.jsonl", paired)
    print(f"generated {len(paired)} expected responses -> {out_dir / 'paired.jsonl'}")
    return 0


def _model_config_from_args(args) -> ModelConfig:
    return ModelConfig(
        speech=SpeechEncoderConfig(
            n_mels=args.n_mels, layers=args.speech_layers, hidden_dim=args.speech_dim,
            win_length=args.win_length, hop_length=args.hop_length,
        ),
        adapter=AdapterConfig(out_dim=args.model_dim, bottleneck_dim=args.bottleneck_dim),
        lm=LMConfig(
            vocab_size=args.vocab_budget, layers=args.lm_layers, heads=args.lm_heads,
            model_dim=args.model_dim, max_positions=args.max_positions,
        ),
        emotion_dim=args.emotion_dim,
        emotion_n_mels=args.emotion_mels,
        emotion_seed=args.encoder_seed,
        emotion_align=args.emotion_align,
    )


def _cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    paired = attach_speech(load_paired_set(args.paired), manifest)
    if not paired:
        raise ValueError("paired set is empty")
    config = TrainConfig(
        mode=args.mode,
        optimizer=OptimizerConfig(step_size=args.step_size),
        batch_size=args.batch_size,
        max_steps=args.max_steps,
        seed=args.seed,
        grad_clip_norm=args.grad_clip,
        log_interval=args.log_interval,
    )
    model = _model_config_from_args(args)
    texts = [s.transcript for s in paired] + [s.expected_response for s in paired]
    tokenizer = build_default_tokenizer(texts, vocab_budget=args.vocab_budget)
    out_dir = Path(args.out)
    _write_run_config(out_dir, args)
    result = train(config, paired, model, out_dir, audio_root=manifest.root, tokenizer=tokenizer)
    loss = result.final_loss
    print(
        f"trained {result.steps} steps; final total={loss.total:.4f} "
        f"(l_kl={loss.l_kl:.4f} l_ce={loss.l_ce:.4f} l_mse={loss.l_mse:.4f}); "
        f"checkpoint -> {result.checkpoint_path}"
    )
    return 0


def _cmd_eval_empathy(args) -> int:
    out_dir = Path(args.out)
    _write_run_config(out_dir, args)
    if args.scorer == "stub":
        scorer = heuristic_stub_scorer
    else:
        if not args.scorer_cmd:
            raise ValueError("--scorer-cmd is required for the external scorer")
        scorer = SubprocessEmpathyScorer(cmd=args.scorer_cmd.split())

    if args.responses:
        rows = []
        with Path(args.responses).open("r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    text = obj.get("response", obj.get("expected_response"))
                    if text is None:
                        raise ValueError(f"no response field in {args.responses}")
                    rows.append((obj["utt_id"], text))
    else:
        manifest = load_manifest(args.manifest)
        state = load_state(args.checkpoint, audio_root=manifest.root)
        rows = []
        for record in manifest:
            result = respond_to_record(state, manifest, record, max_new=args.max_new)
            rows.append((record.utt_id, result.text))

    scores = score_empathy([text for _, text in rows], scorer)
    results_path = out_dir / "empathy.jsonl"
    with results_path.open("w", encoding="utf-8") as fh:
        for (utt_id, text), score in zip(rows, scores):
            fh.write(json.dumps({
                "utt_id": utt_id,
                "response": text,
                "er": score.er if score else None,
                "ex": score.ex if score else None,
            }, ensure_ascii=False))
            fh.write("\n")
    ok = [s for s in scores if s is not None]
    if not ok:
        raise ValueError("no responses were scored")
    er_summary = summarize([s.er for s in ok])
    ex_summary = summarize([s.ex for s in ok])
    summary = {
        "er": {"mean": er_summary.mean, "std": er_summary.std, "n": er_summary.n},
        "ex": {"mean": ex_summary.mean, "std": ex_summary.std, "n": ex_summary.n},
        "failures": len(scores) - len(ok),
    }
    (out_dir / "empathy_summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    print(
        f"scored {len(ok)}/{len(scores)} responses; "
        f"er={er_summary.mean:.3f}({er_summary.std:.3f}) ex={ex_summary.mean:.3f}({ex_summary.std:.3f})"
    )
    return 0


def _cmd_eval_ser(args) -> int:
    manifest = load_manifest(args.manifest)
    state = load_state(args.checkpoint, audio_root=manifest.root)
    out_dir = Path(args.out)
    _write_run_config(out_dir, args)
    cm, ua = evaluate_ser(state, manifest, mode=args.mode, max_new=args.max_new)
    summary = {"mode": args.mode, "ua": ua, "confusion": cm.to_json()}
    (out_dir / "ser_summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    print(f"ser mode={args.mode} ua={ua:.4f}")
    return 0


def _load_scores(path: str) -> dict[str, dict]:
    rows = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                rows[obj["utt_id"]] = obj
    return rows


def _cmd_stats_wilcoxon(args) -> int:
    a_rows = _load_scores(args.file_a)
    b_rows = _load_scores(args.file_b)
    if set(a_rows) != set(b_rows):
        raise ValueError("score files cover different utt_id sets; cannot pair")
    ids = sorted(a_rows)
    metrics = ("er", "ex") if args.metric == "both" else (args.metric,)
    report = {}
    for metric in metrics:
        a = [a_rows[i][metric] for i in ids]
        b = [b_rows[i][metric] for i in ids]
        if any(v is None for v in a + b):
            raise ValueError(f"metric {metric} has unscored entries")
        result = wilcoxon_signed_rank(a, b)
        report[metric] = {
            "w_plus": result.w_plus, "w_minus": result.w_minus,
            "n_effective": result.n_effective, "p": result.p_two_sided,
            "method": result.method, "degenerate": result.degenerate,
        }
        print(
            f"{metric}: n_effective={result.n_effective} w_plus={result.w_plus} "
            f"w_minus={result.w_minus} p={result.p_two_sided:.6g} method={result.method}"
        )
    if args.out:
        out_dir = Path(args.out)
        _write_run_config(out_dir, args)
        (out_dir / "wilcoxon.json").write_text(json.dumps(report, indent=2), encoding="utf-8")
    return 0


def _cmd_report_table(args) -> int:
    report = json.loads(Path(args.cells).read_text(encoding="utf-8"))
    if args.target:
        report["target"] = args.target
    out_dir = Path(args.out)
    _write_run_config(out_dir, args)
    out_path = out_dir / "report.csv"
    write_report_csv(out_path, report)
    print(f"report -> {out_path}")
    return 0


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-mels", type=int, default=16)
    p.add_argument("--speech-dim", type=int, default=24)
    p.add_argument("--speech-layers", type=int, default=2)
    p.add_argument("--emotion-dim", type=int, default=8)
    p.add_argument("--emotion-mels", type=int, default=16)
    p.add_argument("--encoder-seed", type=int, default=1234)
    p.add_argument("--emotion-align", choices=("framewise", "pooled"), default="framewise")
    p.add_argument("--model-dim", type=int, default=32)
    p.add_argument("--lm-layers", type=int, default=2)
    p.add_argument("--lm-heads", type=int, default=2)
    p.add_argument("--vocab-budget", type=int, default=320)
    p.add_argument("--max-positions", type=int, default=512)
    p.add_argument("--bottleneck-dim", type=int, default=512)
    p.add_argument("--win-length", type=int, default=400)
    p.add_argument("--hop-length", type=int, default=160)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="renuance", description=__doc__)
    parser.add_argument("--version", action="version", version=f"renuance {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    data = sub.add_parser("data", help="manifest tooling")
    data_sub = data.add_subparsers(dest="subcommand", required=True)

    build = data_sub.add_parser("build", help="load and validate a manifest")
    build.add_argument("--manifest", required=True)
    build.add_argument("--out", required=True)
    build.set_defaults(func=_cmd_data_build)

    split = data_sub.add_parser("split", help="apply a split rule")
    split.add_argument("--manifest", required=True)
    split.add_argument("--rule", choices=("iemocap", "esd", "msp"), required=True)
    split.add_argument("--seed", type=int, default=0)
    split.add_argument("--train-ratio", type=float, default=0.7)
    split.add_argument("--n-train", type=int, default=4290)
    split.add_argument("--n-test", type=int, default=1245)
    split.add_argument("--out", required=True)
    split.set_defaults(func=_cmd_data_split)

    pseudo = data_sub.add_parser("pseudo-dims", help="fill missing VAD labels from the frozen encoder")
    pseudo.add_argument("--manifest", required=True)
    pseudo.add_argument("--out", required=True)
    pseudo.add_argument("--encoder-seed", type=int, default=1234)
    pseudo.add_argument("--emotion-dim", type=int, default=8)
    pseudo.add_argument("--emotion-mels", type=int, default=16)
    pseudo.add_argument("--win-length", type=int, default=400)
    pseudo.add_argument("--hop-length", type=int, default=160)
    pseudo.set_defaults(func=_cmd_data_pseudo)

    gen = sub.add_parser("gen-expected", help="collect expected responses for alignment")
    gen.add_argument("--manifest", required=True)
    gen.add_argument("--generator", choices=("fixture", "external"), default="fixture")
    gen.add_argument("--url", default=None)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_gen_expected)

    tr = sub.add_parser("train", help="joint alignment + auxiliary training")
    tr.add_argument("--manifest", required=True)
    tr.add_argument("--paired", required=True)
    tr.add_argument(
        "--mode",
        choices=("re_llm", "no_dim_aux", "no_emo_enc", "speech_baseline", "text_only", "text_plus_label"),
        default="re_llm",
    )
    tr.add_argument("--max-steps", type=int, default=500)
    tr.add_argument("--batch-size", type=int, default=4)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--step-size", type=float, default=1e-4)
    tr.add_argument("--grad-clip", type=float, default=1.0)
    tr.add_argument("--log-interval", type=int, default=10)
    tr.add_argument("--out", required=True)
    _add_model_flags(tr)
    tr.set_defaults(func=_cmd_train)

    ev = sub.add_parser("eval", help="evaluation")
    ev_sub = ev.add_subparsers(dest="subcommand", required=True)

    emp = ev_sub.add_parser("empathy", help="score generated responses")
    emp.add_argument("--checkpoint", default=None)
    emp.add_argument("--manifest", default=None)
    emp.add_argument("--responses", default=None, help="score an existing responses JSONL instead of generating")
    emp.add_argument("--scorer", choices=("stub", "external"), default="stub")
    emp.add_argument("--scorer-cmd", default=None)
    emp.add_argument("--max-new", type=int, default=64)
    emp.add_argument("--out", required=True)
    emp.set_defaults(func=_cmd_eval_empathy)

    ser = ev_sub.add_parser("ser", help="emotion recognition accuracy")
    ser.add_argument("--checkpoint", required=True)
    ser.add_argument("--manifest", required=True)
    ser.add_argument("--mode", choices=("prompt", "head"), default="prompt")
    ser.add_argument("--max-new", type=int, default=12)
    ser.add_argument("--out", required=True)
    ser.set_defaults(func=_cmd_eval_ser)

    st = sub.add_parser("stats", help="paired statistics")
    st_sub = st.add_subparsers(dest="subcommand", required=True)
    wil = st_sub.add_parser("wilcoxon", help="paired signed-rank test over two score files")
    wil.add_argument("file_a")
    wil.add_argument("file_b")
    wil.add_argument("--metric", choices=("er", "ex", "both"), default="both")
    wil.add_argument("--out", default=None)
    wil.set_defaults(func=_cmd_stats_wilcoxon)

    rep = sub.add_parser("report", help="summary tables")
    rep_sub = rep.add_subparsers(dest="subcommand", required=True)
    table = rep_sub.add_parser("table", help="emit mean(std) cells with derived improvement columns")
    table.add_argument("--cells", required=True)
    table.add_argument("--target", default=None)
    table.add_argument("--out", required=True)
    table.set_defaults(func=_cmd_report_table)

    return parser


def _apply_env_config(parser: argparse.ArgumentParser) -> None:
    path = os.environ.get(CONFIG_ENV_VAR)
    if not path:
        return
    config = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(config, dict):
        raise ValueError(f"{CONFIG_ENV_VAR} file must contain a JSON object")
    parser.set_defaults(**config)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        _apply_env_config(parser)
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit:
        raise
    except Exception as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
