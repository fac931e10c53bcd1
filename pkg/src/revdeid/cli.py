"""Command line front end.

Commands: synth, train phase1/phase2, deidentify, reverse, eval, ablate.
Exit codes: 0 on success, 1 on runtime failures (missing files, bad
checkpoints, divergence), 2 on usage or configuration errors. Options can
come from a `key = value` config file; explicit flags win. See docs/cli.md.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings

import numpy as np

from . import checkpoint as ckpt
from .core import (
    CheckpointFormatError,
    ConfigError,
    ContractError,
    DivergenceError,
    parse_sign_vector,
)
from .dataset import SyntheticSpec, generate_synthetic_dataset, load_dataset, save_dataset
from .evaluation import (
    auc,
    bootstrap_environment,
    confidence_comparison,
    decidability,
    encoder_transform,
    identity_transform,
    ks_statistic,
    matcher_scorer,
    pixel_scorer,
    plot_confidence_scatter,
    plot_score_histograms,
    toy_confidence,
    verification_protocol,
    write_report,
    write_scores,
)
from .losses import LossWeights
from .matcher import Phase1Config, train_phase1
from .networks import encode
from .pipeline import PipelineConfig, process_stream
from .training import TrainConfig, save_history, train_phase2

ABLATION_PARAMS = (
    "omega_mse", "omega_adv", "omega_ano", "omega_con", "omega_div", "omega_dis",
    "delta_gp",
)


def parse_config_file(path) -> dict[str, str]:
    """Reads `key = value` lines; '#' starts a comment, blank lines ignored."""
    values: dict[str, str] = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
    return values


def _coerce(key: str, value: str, typ):
    try:
        if typ is bool:
            if value.lower() in ("1", "true", "yes"):
                return True
            if value.lower() in ("0", "false", "no"):
                return False
            raise ValueError(value)
        return typ(value)
    except ValueError:
        raise ConfigError(f"config key {key!r} must be {typ.__name__}, got {value!r}")


def merged_options(args, spec: dict[str, tuple]) -> dict:
    """Precedence: built-in default < config file < explicit CLI flag."""
    file_vals = parse_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = sorted(set(file_vals) - set(spec))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}; valid keys: {sorted(spec)}")
    out = {}
    for key, (typ, default) in spec.items():
        cli_val = getattr(args, key, None)
        if cli_val is not None:
            out[key] = cli_val
        elif key in file_vals:
            out[key] = _coerce(key, file_vals[key], typ)
        else:
            out[key] = default
    return out


SYNTH_SPEC = {
    "subjects": (int, 40),
    "sequences": (int, 2),
    "frames": (int, 8),
    "t": (int, 4),
    "frame_size": (int, 96),
    "seed": (int, 0),
}

PHASE1_SPEC = {
    "epochs": (int, 5),
    "batch_size": (int, 32),
    "lr": (float, 1e-4),
    "seed": (int, 0),
    "steps_per_epoch": (int, None),
}

PHASE2_SPEC = {
    "epochs": (int, 30),
    "batch_size": (int, 12),
    "lr": (float, 2e-4),
    "critic_steps": (int, 5),
    "decoder_steps": (int, 2),
    "delta_gp": (float, 0.01),
    "hist_bins": (int, 16),
    "seed": (int, 0),
    "steps_per_epoch": (int, 8),
    "omega_mse": (float, 50.0),
    "omega_adv": (float, 1.0),
    "omega_ano": (float, 1.0),
    "omega_con": (float, 1.0),
    "omega_div": (float, 1.0),
    "omega_dis": (float, 1.0),
    "sign": (str, None),
}


def _phase2_config(opts: dict, sign_vector) -> TrainConfig:
    weights = LossWeights(
        mse=opts["omega_mse"], adv=opts["omega_adv"], ano=opts["omega_ano"],
        con=opts["omega_con"], div=opts["omega_div"], dis=opts["omega_dis"],
    )
    return TrainConfig(
        epochs=opts["epochs"], batch_size=opts["batch_size"], lr=opts["lr"],
        critic_steps=opts["critic_steps"], decoder_steps=opts["decoder_steps"],
        clip_delta=opts["delta_gp"], hist_bins=opts["hist_bins"], seed=opts["seed"],
        steps_per_epoch=opts["steps_per_epoch"], weights=weights,
        sign_vector=tuple(int(v) for v in sign_vector),
    )


def cmd_synth(args) -> int:
    opts = merged_options(args, SYNTH_SPEC)
    if os.path.isdir(args.out) and os.listdir(args.out) and not args.force:
        raise ConfigError(f"output directory {args.out!r} is not empty; pass --force to reuse")
    spec = SyntheticSpec(
        subjects=opts["subjects"], sequences_per_subject=opts["sequences"],
        frames_per_sequence=opts["frames"], t=opts["t"], frame_size=opts["frame_size"],
    )
    dataset = generate_synthetic_dataset(spec, seed=opts["seed"])
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} frames for {spec.subjects} subjects to {args.out}")
    return 0


def cmd_train_phase1(args) -> int:
    opts = merged_options(args, PHASE1_SPEC)
    dataset = load_dataset(args.data)
    config = Phase1Config(
        epochs=opts["epochs"], batch_size=opts["batch_size"], lr=opts["lr"],
        seed=opts["seed"], steps_per_epoch=opts["steps_per_epoch"],
    )
    model = train_phase1(dataset, config, log=print)
    ckpt.save_matcher(args.out, model)
    print(f"matcher checkpoint written to {args.out} ({ckpt.fingerprint(args.out)})")
    return 0


def cmd_train_phase2(args) -> int:
    opts = merged_options(args, PHASE2_SPEC)
    matcher = ckpt.load_matcher(args.matcher)
    sign_text = opts["sign"] or ",".join(["-1"] + ["1"] * (matcher.t - 1))
    sign = parse_sign_vector(sign_text, matcher.t)
    config = _phase2_config(opts, sign)
    dataset = load_dataset(args.data)

    def on_epoch(epoch, terms, pair):
        line = " ".join(f"{k}={v:.4f}" for k, v in terms.items())
        print(f"epoch {epoch + 1}/{config.epochs} {line}")

    result = train_phase2(dataset, matcher, config, on_epoch=on_epoch)
    ckpt.save_generator(args.out, result.pair)
    history_path = args.history or args.out + ".history.csv"
    save_history(result.history, history_path)
    if args.critic_out:
        ckpt.save_critic(args.critic_out, result.critic, t=matcher.t)
    print(f"generator checkpoint written to {args.out} ({ckpt.fingerprint(args.out)})")
    print(f"loss history written to {history_path}")
    return 0


def cmd_deidentify(args) -> int:
    config = PipelineConfig(
        mode="deidentify", checkpoint=args.checkpoint, seed=args.seed, margin=args.margin,
    )
    summary = process_stream(args.input, args.out, config)
    print(json.dumps({k: v for k, v in summary.items() if k != "failures"}))
    return 0


def cmd_reverse(args) -> int:
    config = PipelineConfig(mode="reverse", checkpoint=args.checkpoint)
    summary = process_stream(args.input, args.out, config)
    print(json.dumps({k: v for k, v in summary.items() if k != "failures"}))
    return 0


def _parse_pairs(text: str) -> tuple[int, int]:
    parts = text.split(",")
    if len(parts) != 2:
        raise ConfigError(f"--pairs must be 'genuine,impostor', got {text!r}")
    try:
        g, i = int(parts[0]), int(parts[1])
    except ValueError:
        raise ConfigError(f"--pairs must be two integers, got {text!r}")
    return g, i


def cmd_eval(args) -> int:
    dataset = load_dataset(args.data)
    pairs = _parse_pairs(args.pairs)
    protocol = args.protocol.replace("-", "_")

    pair_model = None
    if protocol != "xx":
        if not args.checkpoint:
            raise ConfigError(f"protocol {args.protocol!r} needs --checkpoint")
        pair_model = ckpt.load_generator(args.checkpoint)

    if args.scorer == "matcher":
        if not args.matcher:
            raise ConfigError("--scorer matcher needs --matcher")
        scorer = matcher_scorer(ckpt.load_matcher(args.matcher))
    else:
        scorer = pixel_scorer

    if protocol == "xx":
        ta, tb = identity_transform, identity_transform
    elif protocol == "xa":
        ta, tb = identity_transform, encoder_transform(pair_model.encoder)
    else:
        enc_t = encoder_transform(pair_model.encoder)
        ta, tb = enc_t, enc_t

    env = verification_protocol(
        dataset, protocol, pairs, scorer, seed=args.seed, transform_a=ta, transform_b=tb,
    )

    os.makedirs(args.report, exist_ok=True)
    rows = []
    for name, stat in (
        ("decidability", decidability),
        ("auc", auc),
        ("ks_d", lambda e: ks_statistic(e.genuine_scores, e.impostor_scores)[0]),
        ("ks_p", lambda e: ks_statistic(e.genuine_scores, e.impostor_scores)[1]),
    ):
        mean, sd = bootstrap_environment(env, stat, seed=args.seed)
        rows.append((name, args.protocol, mean, sd))

    if pair_model is not None:
        rng = np.random.default_rng(args.seed)
        count = min(100, len(dataset))
        picks = rng.choice(len(dataset), size=count, replace=False)
        conf_x, conf_a = [], []
        for row in picks:
            crop = dataset.crops[row]
            conf_x.append(toy_confidence(crop))
            conf_a.append(toy_confidence(encode(pair_model.encoder, crop,
                                                int(rng.integers(2 ** 31)))))
        comp = confidence_comparison(conf_x, conf_a)
        rows.append(("confidence_x", args.protocol, comp["mean_x"], 0.0))
        rows.append(("confidence_a", args.protocol, comp["mean_a"], 0.0))
        if comp["pearson"] is not None:
            rows.append(("confidence_pearson", args.protocol, comp["pearson"], 0.0))
        plot_confidence_scatter(conf_x, conf_a,
                                os.path.join(args.report, "confidence.svg"),
                                title=f"detector confidence ({args.protocol})")

    write_report(rows, os.path.join(args.report, "report.csv"))
    write_scores(env.genuine_scores, os.path.join(args.report, "scores_genuine.txt"))
    write_scores(env.impostor_scores, os.path.join(args.report, "scores_impostor.txt"))
    plot_score_histograms(env, os.path.join(args.report, "scores.svg"),
                          title=f"{args.protocol} decision environment")
    for name, proto, mean, sd in rows:
        print(f"{name} [{proto}] = {mean:.4f} (sd {sd:.4f})")
    print(f"report written to {args.report}")
    return 0


# ablation isolates the weighted objective, so the pure-mse decoder
# refinement steps default to off here
ABLATE_SPEC = dict(PHASE2_SPEC, epochs=(int, 6), batch_size=(int, 8),
                   steps_per_epoch=(int, 6), decoder_steps=(int, 0))


def _ablation_run(dataset, matcher, config: TrainConfig) -> dict:
    peak = 0.0

    def on_critic(step, max_w):
        nonlocal peak
        peak = max(peak, max_w)

    try:
        result = train_phase2(dataset, matcher, config, on_critic_step=on_critic)
        return {
            "final_mse": result.history["mse"][-1],
            "diverged": False,
            "nan_term": "",
            "max_critic_weight": peak,
        }
    except DivergenceError as e:
        return {
            "final_mse": float("nan"),
            "diverged": True,
            "nan_term": e.term,
            "max_critic_weight": peak,
        }


def cmd_ablate(args) -> int:
    if args.factor <= 0:
        raise ConfigError(f"--factor must be positive, got {args.factor}")
    opts = merged_options(args, ABLATE_SPEC)
    dataset = load_dataset(args.data)
    matcher = ckpt.load_matcher(args.matcher)
    sign_text = opts["sign"] or ",".join(["-1"] + ["1"] * (matcher.t - 1))
    sign = parse_sign_vector(sign_text, matcher.t)

    base_config = _phase2_config(opts, sign)
    scaled_opts = dict(opts)
    scaled_opts[args.param] = opts[args.param] * args.factor
    scaled_config = _phase2_config(scaled_opts, sign)

    print(f"ablation: {args.param} x {args.factor} "
          f"({opts[args.param]} -> {scaled_opts[args.param]})")
    runs = []
    for run_name, config in (("base", base_config), ("scaled", scaled_config)):
        stats = _ablation_run(dataset, matcher, config)
        stats["run"] = run_name
        stats["constraint_violated"] = stats["max_critic_weight"] > base_config.clip_delta + 1e-9
        runs.append(stats)
        print(f"  {run_name}: final_mse={stats['final_mse']!r} diverged={stats['diverged']} "
              f"max_critic_weight={stats['max_critic_weight']:.4f} "
              f"constraint_violated={stats['constraint_violated']}"
              + (f" nan_term={stats['nan_term']}" if stats["diverged"] else ""))

    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "ablation.csv")
    with open(out_path, "w") as f:
        f.write("run,param,factor,final_mse,diverged,nan_term,max_critic_weight,"
                "constraint_violated\n")
        for s in runs:
            f.write(f"{s['run']},{args.param},{args.factor},{s['final_mse']!r},"
                    f"{s['diverged']},{s['nan_term']},{s['max_critic_weight']!r},"
                    f"{s['constraint_violated']}\n")
    print(f"ablation report written to {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="revdeid",
        description="Reversible face de-identification: synthesis, training, "
                    "pipelines and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic face corpus")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--force", action="store_true", help="write into a non-empty directory")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--subjects", type=int)
    p.add_argument("--sequences", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--t", type=int, help="attribute count (4 or 5)")
    p.add_argument("--frame-size", dest="frame_size", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    train = sub.add_parser("train", help="train the matcher or the generator pair")
    tsub = train.add_subparsers(dest="phase", required=True)

    p = tsub.add_parser("phase1", help="train the attribute matchers")
    p.add_argument("--data", required=True, help="dataset directory from synth")
    p.add_argument("--out", required=True, help="matcher checkpoint path")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps-per-epoch", dest="steps_per_epoch", type=int)
    p.set_defaults(func=cmd_train_phase1)

    p = tsub.add_parser("phase2", help="adversarial training of the double-U pair")
    p.add_argument("--data", required=True)
    p.add_argument("--matcher", required=True, help="phase-1 checkpoint")
    p.add_argument("--out", required=True, help="generator checkpoint path")
    p.add_argument("--critic-out", dest="critic_out", help="optional critic checkpoint path")
    p.add_argument("--history", help="loss history CSV path (default: <out>.history.csv)")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--sign", help="sign vector, e.g. '-1,1,1,1'")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--critic-steps", dest="critic_steps", type=int)
    p.add_argument("--decoder-steps", dest="decoder_steps", type=int)
    p.add_argument("--delta-gp", dest="delta_gp", type=float)
    p.add_argument("--hist-bins", dest="hist_bins", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps-per-epoch", dest="steps_per_epoch", type=int)
    for name in ("mse", "adv", "ano", "con", "div", "dis"):
        p.add_argument(f"--omega-{name}", dest=f"omega_{name}", type=float)
    p.set_defaults(func=cmd_train_phase2)

    p = sub.add_parser("deidentify", help="de-identify a directory of frames")
    p.add_argument("--in", dest="input", required=True, help="input frame directory")
    p.add_argument("--out", required=True, help="output frame directory")
    p.add_argument("--checkpoint", required=True, help="generator checkpoint")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--margin", type=float, default=0.0)
    p.set_defaults(func=cmd_deidentify)

    p = sub.add_parser("reverse", help="reconstruct originals from public frames")
    p.add_argument("--in", dest="input", required=True, help="public frame directory")
    p.add_argument("--out", required=True, help="output frame directory")
    p.add_argument("--checkpoint", required=True, help="generator checkpoint")
    p.set_defaults(func=cmd_reverse)

    p = sub.add_parser("eval", help="verification metrics for one protocol")
    p.add_argument("--data", required=True)
    p.add_argument("--protocol", required=True,
                   choices=["xx", "xa", "temporal", "cross-session", "cross_session"])
    p.add_argument("--pairs", required=True, help="genuine,impostor counts, e.g. 200,400")
    p.add_argument("--report", required=True, help="report output directory")
    p.add_argument("--checkpoint", help="generator checkpoint (needed beyond xx)")
    p.add_argument("--matcher", help="matcher checkpoint for --scorer matcher")
    p.add_argument("--scorer", choices=["pixel", "matcher"], default="pixel")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="compare a short run against a scaled parameter")
    p.add_argument("--param", required=True, choices=ABLATION_PARAMS)
    p.add_argument("--factor", required=True, type=float)
    p.add_argument("--data", required=True)
    p.add_argument("--matcher", required=True)
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--sign", help="sign vector")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--critic-steps", dest="critic_steps", type=int)
    p.add_argument("--decoder-steps", dest="decoder_steps", type=int)
    p.add_argument("--delta-gp", dest="delta_gp", type=float)
    p.add_argument("--hist-bins", dest="hist_bins", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps-per-epoch", dest="steps_per_epoch", type=int)
    for name in ("mse", "adv", "ano", "con", "div", "dis"):
        p.add_argument(f"--omega-{name}", dest=f"omega_{name}", type=float)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    warnings.filterwarnings("default")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: file not found: {e.filename or e}", file=sys.stderr)
        return 1
    except (ContractError, CheckpointFormatError, DivergenceError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
