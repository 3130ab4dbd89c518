"""End-to-end orchestration: dataset generation and labeling, feature
selection, final training, evaluation, and report emission.

All stages communicate only through files (the dataset container, ESNN
checkpoints, JSON fragments) so the CLI commands can run as independent
processes. Outputs are deterministic for a fixed config and seed; wall
clock goes to a separate timing file so reports stay byte-stable.
"""

import json
import logging
import os
import time

import numpy as np

from . import featsel
from .beams import dft_codebook, optimal_beam, topg_accuracy, trr
from .channel import RayTraceConfig, TargetLostError, assemble_channel, trace_paths
from .checkpoint import save_checkpoint, load_checkpoint
from .dataset import read_container, write_container
from .featsel import LOCATION, UNIVERSAL_FEATURES, CachedEvaluator, canonical, sffs
from .predictor import (ArchConfig, Predictor, SampleSet, TrainConfig, predict,
                        sigmoid, split_indices, train)
from .rng import derive_seed
from .scene import SceneConfig, generate_scenario
from .semantics import render_frame

log = logging.getLogger(__name__)

DEFAULT_HORIZONS = (1, 6, 11, 16, 21, 26, 31, 36)
DEFAULT_G_LIST = (1, 2, 3, 5)


class PipelineError(ValueError):
    pass


# ---------------------------------------------------------------------------
# generation

def generate_dataset(scene_cfg: SceneConfig, rt_cfg: RayTraceConfig,
                     resolution=(160, 320), horizons=DEFAULT_HORIZONS,
                     M_bm=None, store_channels=True) -> SampleSet:
    """Simulate, render, trace and label one dataset.

    A frame yields a sample only when its target user persists through the
    longest horizon; excluded frames are counted and logged, never dropped
    silently.
    """
    horizons = tuple(sorted(horizons))
    max_h = horizons[-1] if horizons else 0
    frames = generate_scenario(scene_cfg)
    if M_bm is None:
        M_bm = rt_cfg.N_t
    codebook = dft_codebook(rt_cfg.N_t, M_bm)

    # per-frame artifacts, computed once
    per_frame = []
    for frame in frames:
        if frame.target_user_id is None:
            per_frame.append(None)
            continue
        paths = trace_paths(frame, scene_cfg, rt_cfg)
        ch = assemble_channel(paths, rt_cfg)
        ev = optimal_beam(ch, codebook, rt_cfg.P_k, rt_cfg.sigma2)
        per_frame.append({
            "target": frame.target_user_id,
            "los": any(p.is_los for p in paths),
            "channel": ch.entries,
            "beam": ev.optimal_index,
        })

    rows = []
    excluded = 0
    for t0 in range(len(frames) - max_h):
        art = per_frame[t0]
        if art is None:
            excluded += 1
            continue
        target = art["target"]
        window = per_frame[t0:t0 + max_h + 1]
        if any(w is None or w["target"] != target for w in window):
            excluded += 1
            continue
        blockage = [0 if per_frame[t0 + h]["los"] else 1 for h in horizons]
        maps = render_frame(frames[t0], scene_cfg, resolution)
        rows.append({
            "maps": np.stack([m.labels for m in maps]),
            "loc": np.asarray(frames[t0].user_antenna_pos, dtype=np.float32),
            "beam": art["beam"],
            "blockage": blockage,
            "frame_id": t0,
            "channel": art["channel"],
        })
    if not rows:
        raise PipelineError("zero usable samples (no frame keeps its target "
                            "through the longest horizon)")
    log.info("generated %d samples (%d frames excluded)", len(rows), excluded)

    return SampleSet(
        label_maps=np.stack([r["maps"] for r in rows]).astype(np.uint8),
        locations=np.stack([r["loc"] for r in rows]),
        beam_labels=np.array([r["beam"] for r in rows], dtype=np.uint16),
        blockage=np.array([r["blockage"] for r in rows], dtype=np.uint8),
        frame_ids=np.array([r["frame_id"] for r in rows], dtype=np.uint32),
        horizons=horizons,
        M_bm=M_bm,
        channels=np.stack([r["channel"] for r in rows]) if store_channels else None,
    )


def cmd_generate(scene_cfg, rt_cfg, out_path, resolution=(160, 320),
                 horizons=DEFAULT_HORIZONS, M_bm=None, store_channels=True):
    samples = generate_dataset(scene_cfg, rt_cfg, resolution, horizons, M_bm,
                               store_channels)
    manifest = write_container(out_path, samples, scene_cfg, rt_cfg, resolution,
                               store_channels)
    return samples, manifest


# ---------------------------------------------------------------------------
# feature selection

def training_evaluator(dataset: SampleSet, task, horizon, epochs, seed,
                       arch: ArchConfig, batch_size=128, learning_rate=1e-3):
    """Deterministic FeatureSet -> validation-accuracy mapping.

    Each candidate set trains from scratch for a fixed epoch budget with a
    seed derived from (root seed, canonical set), so the evaluator is a
    pure function of its argument.
    """
    def fn(feats):
        run_seed = derive_seed(seed, task, str(horizon), ",".join(feats))
        cfg = TrainConfig(epochs=epochs, seed=run_seed, arch=arch,
                          batch_size=batch_size, learning_rate=learning_rate)
        res = train(dataset, feats, task, cfg, horizon=horizon)
        return res.val_accuracy
    return CachedEvaluator(fn)


def cmd_select(dataset: SampleSet, task, out_dir, horizon=None, epochs=5,
               seed=0, v_max=None, pinned=(LOCATION,), arch=None,
               batch_size=128, learning_rate=1e-3):
    """Run the floating search with the training-based evaluator."""
    if epochs < 1:
        raise PipelineError("selection budget must allow at least one epoch")
    if arch is None:
        arch = ArchConfig(input_hw=dataset.map_hw)
    evaluator = training_evaluator(dataset, task, horizon, epochs, seed, arch,
                                   batch_size, learning_rate)
    selected, state = sffs(UNIVERSAL_FEATURES, evaluator, pinned=pinned,
                           v_max=v_max, return_state=True)
    os.makedirs(out_dir, exist_ok=True)
    featsel.write_trace(os.path.join(out_dir, f"select_{task}.trace.jsonl"), state)
    with open(os.path.join(out_dir, f"selected_{task}.json"), "w") as fh:
        json.dump({"task": task, "horizon": horizon, "features": list(selected),
                   "seed": seed, "evaluator_calls": evaluator.call_count},
                  fh, indent=1, sort_keys=True)
        fh.write("\n")
    return selected


# ---------------------------------------------------------------------------
# final training and evaluation

def _ckpt_name(task, horizon):
    return f"{task}.esnn" if task == "beam" else f"{task}_h{horizon}.esnn"


def _meta_name(task, horizon):
    return f"{task}.meta.json" if task == "beam" else f"{task}_h{horizon}.meta.json"


def cmd_train(dataset: SampleSet, features, task, cfg: TrainConfig, out_dir,
              horizon=None):
    """Train on the train split and checkpoint the parameters."""
    res = train(dataset, features, task, cfg, horizon=horizon)
    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint(os.path.join(out_dir, _ckpt_name(task, horizon)),
                    res.params, res.state)
    meta = {
        "task": task,
        "horizon": horizon,
        "features": list(res.features),
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate,
        "split": list(cfg.split),
        "arch": {
            "input_hw": list(cfg.arch.input_hw),
            "aux_widths": list(cfg.arch.aux_widths),
            "beam_conv": [list(x) for x in cfg.arch.beam_conv],
            "beam_res": [list(x) for x in cfg.arch.beam_res],
            "beam_hidden": cfg.arch.beam_hidden,
            "bl_conv": [list(x) for x in cfg.arch.bl_conv],
            "bl_res": [list(x) for x in cfg.arch.bl_res],
            "bl_hidden": cfg.arch.bl_hidden,
            "dropout": cfg.arch.dropout,
        },
        "M_bm": dataset.M_bm,
        "val_accuracy": res.val_accuracy,
    }
    with open(os.path.join(out_dir, _meta_name(task, horizon)), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return res, meta


def _arch_from_meta(m):
    return ArchConfig(
        input_hw=tuple(m["input_hw"]), aux_widths=tuple(m["aux_widths"]),
        beam_conv=tuple(tuple(x) for x in m["beam_conv"]),
        beam_res=tuple(tuple(x) for x in m["beam_res"]),
        beam_hidden=m["beam_hidden"],
        bl_conv=tuple(tuple(x) for x in m["bl_conv"]),
        bl_res=tuple(tuple(x) for x in m["bl_res"]),
        bl_hidden=m["bl_hidden"], dropout=m["dropout"])


def cmd_eval(dataset: SampleSet, out_dir, task, horizon=None,
             g_list=DEFAULT_G_LIST, P_k=None, sigma2=None):
    """Evaluate a checkpointed model on the test split; write a fragment."""
    meta_path = os.path.join(out_dir, _meta_name(task, horizon))
    ckpt_path = os.path.join(out_dir, _ckpt_name(task, horizon))
    for p in (meta_path, ckpt_path):
        if not os.path.exists(p):
            raise PipelineError(f"missing artifact {p}; run train first")
    with open(meta_path) as fh:
        meta = json.load(fh)
    params, state = load_checkpoint(ckpt_path)
    features = canonical(meta["features"])
    arch = _arch_from_meta(meta["arch"])
    in_channels = (len(features) - 1) * dataset.n_cams
    model = Predictor(task, in_channels, meta["M_bm"], arch)

    _, _, test_idx = split_indices(dataset.frame_ids, tuple(meta["split"]),
                                   meta["seed"])
    if len(test_idx) == 0:
        raise PipelineError("empty test split")
    out = predict(model, params, state, dataset, test_idx, features)

    fragment = {"task": task, "horizon": horizon, "n": int(len(test_idx)),
                "seed": meta["seed"]}
    if task == "beam":
        if dataset.channels is None:
            raise PipelineError("TRR evaluation needs stored channels; "
                                "regenerate the dataset with channels on")
        order = np.argsort(-out, axis=1, kind="stable")
        labels = dataset.beam_labels[test_idx]
        codebook = dft_codebook(dataset.channels.shape[2], dataset.M_bm)
        chans = list(dataset.channels[test_idx])
        defaults = RayTraceConfig()
        if P_k is None:
            P_k = defaults.P_k
        if sigma2 is None:
            sigma2 = defaults.sigma2
        fragment["g_list"] = list(g_list)
        fragment["topg_accuracy"] = {}
        fragment["trr"] = {}
        for g in g_list:
            sets = [tuple(int(i) for i in row[:g]) for row in order]
            fragment["topg_accuracy"][str(g)] = topg_accuracy(labels, sets, g)
            fragment["trr"][str(g)] = trr(chans, codebook, sets, g,
                                          P_k=P_k, sigma2=sigma2)
    else:
        probs = sigmoid(out[:, 0])
        col = list(dataset.horizons).index(horizon if horizon is not None
                                           else dataset.horizons[0])
        labels = dataset.blockage[test_idx, col]
        pred = (probs >= 0.5).astype(int)
        fragment["blockage_accuracy"] = float(np.mean(pred == labels))

    name = f"eval_{task}.json" if task == "beam" else f"eval_{task}_h{horizon}.json"
    with open(os.path.join(out_dir, name), "w") as fh:
        json.dump(fragment, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return fragment


# ---------------------------------------------------------------------------
# report

def cmd_report(run_dir):
    """Assemble report.json and metrics.csv from the run artifacts."""
    missing = []
    frags = []
    beam_frag = None
    if not os.path.isdir(run_dir):
        raise PipelineError(f"run directory {run_dir} does not exist")
    for name in sorted(os.listdir(run_dir)):
        if name.startswith("eval_") and name.endswith(".json"):
            with open(os.path.join(run_dir, name)) as fh:
                frags.append(json.load(fh))
    if not frags:
        missing.append("eval_*.json (no evaluation fragments)")
    selected = {}
    for task in ("beam", "blockage"):
        p = os.path.join(run_dir, f"selected_{task}.json")
        if os.path.exists(p):
            with open(p) as fh:
                selected[task] = json.load(fh)["features"]
    if missing:
        raise PipelineError("missing artifacts: " + "; ".join(missing))

    rows = []  # (metric, key, value, n, seed)
    report = {"selected_features": selected, "metrics": {}, "seeds": {}}
    for frag in frags:
        if frag["task"] == "beam":
            report["metrics"]["beam"] = {
                "topg_accuracy": frag["topg_accuracy"], "trr": frag["trr"]}
            report["seeds"]["beam"] = frag["seed"]
            for g in frag["g_list"]:
                rows.append(("topg_accuracy", f"G={g}",
                             frag["topg_accuracy"][str(g)], frag["n"], frag["seed"]))
            for g in frag["g_list"]:
                rows.append(("trr", f"G={g}", frag["trr"][str(g)],
                             frag["n"], frag["seed"]))
        else:
            h = frag["horizon"]
            report["metrics"].setdefault("blockage", {})[str(h)] = \
                frag["blockage_accuracy"]
            report["seeds"][f"blockage_h{h}"] = frag["seed"]
            rows.append(("blockage_accuracy", f"horizon={h}",
                         frag["blockage_accuracy"], frag["n"], frag["seed"]))

    with open(os.path.join(run_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(run_dir, "metrics.csv"), "w") as fh:
        fh.write("metric,key,value,n,seed\n")
        for metric, key, value, n, seed in rows:
            fh.write(f"{metric},{key},{value!r},{n},{seed}\n")
    with open(os.path.join(run_dir, "timing.json"), "w") as fh:
        json.dump({"written_at": time.time()}, fh)
    return report
