"""End-to-end experiments. Each writes CSVs under an output directory.

Every random stream is derived from ``SeedSequence([seed, purpose, index])``
so cells are independent of iteration order and reruns are bit-identical.
"""

from __future__ import annotations

import csv
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..channel import ChannelConfig
from ..codec import BITS_PER_BOX, brightness_equalize, decode_scene, encode_scene, match_boxes
from ..diffusion import (Denoiser, DenoiserArch, SplitPlan, evaluate_loss, load_checkpoint, make_conditioning,
                         make_optimizer, make_schedule, save_checkpoint, split_sample, to_image_space,
                         to_model_space, train_step)
from ..encode_offload import (EncoderEnv, EnvConfig, QLearningConfig, evaluate_policy, exhaustive_best_split,
                              frozen_start_states, frozen_training, greedy_rollout, random_profile,
                              static_policy, train_policy)
from ..errors import ConfigurationError, SearchSpaceError
from ..federated import AggregationPolicy, ClusterState, FLClient, fl_round, general_phase_range
from ..scheduler import (BatchLatencyModel, OffloadRequest, TradeoffMetric, brute_force_assign, random_instance,
                         relative_gap, sequential_assign, user_latency)
from .config import ScenarioConfig
from .scenes import background_texture, detect_boxes, make_dataset

# stream purposes
_TRAIN_LOCAL, _TRAIN_CLUSTER, _EVAL_SCENES, _SAMPLING, _FL, _SCHED, _EO_DRIFT, _EO_FROZEN = range(8)

METRICS_COLUMNS = ["seed", "user", "snr_db", "offload_steps", "iou_mean", "psnr_db", "latency_ms_modeled"]


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def _int_seed(*key) -> int:
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1)[0])


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def arch_for(cfg: ScenarioConfig, hidden: int | None = None) -> DenoiserArch:
    m = cfg.model
    h, w = cfg.scene.image_size
    hid = hidden or m.hidden
    return DenoiserArch(height=h, width=w, time_dim=m.time_dim, k_max=m.k_max, hidden=hid, hidden2=hid, T=m.T)


_SCHEDULES: dict = {}


def schedule_for(cfg: ScenarioConfig):
    key = (cfg.model.T, cfg.model.beta_min, cfg.model.beta_max)
    if key not in _SCHEDULES:
        _SCHEDULES[key] = make_schedule(*key)
    return _SCHEDULES[key]


def _scene_kw(cfg: ScenarioConfig) -> dict:
    s = cfg.scene
    return dict(image_size=tuple(s.image_size), box_count_range=tuple(s.box_count_range),
                box_px_range=tuple(s.box_px_range), shading=s.shading)


def _training_arrays(cfg, rng, background_id, n):
    _, images, conds = make_dataset(rng, background_id, n, cfg.model.k_max, **_scene_kw(cfg))
    return to_model_space(images).reshape(n, -1), conds


def _fit(model, x, cond, steps, cfg, rng, t_range, name, log_rows):
    tr = cfg.train
    opt = make_optimizer(tr.optimizer, tr.lr)
    for i in range(1, steps + 1):
        idx = rng.integers(0, len(x), size=min(tr.batch_size, len(x)))
        _, loss = train_step(model, (x[idx], cond[idx]), schedule_for(cfg), rng, opt, t_range)
        if i % tr.log_every == 0 or i == steps:
            log_rows.append((name, i, loss))
    return model


def model_dir(cfg: ScenarioConfig, out: Path) -> Path:
    return Path(cfg.model_dir) if cfg.model_dir else Path(out) / "models"


def _model_paths(cfg, out):
    d = model_dir(cfg, out)
    return [d / f"local_user{u}.ckpt" for u in range(cfg.num_users)], d / "cluster.ckpt"


def train_models(cfg: ScenarioConfig, out) -> tuple[list[Denoiser], Denoiser]:
    """Train one personalized (full-range) model per user and the cluster model
    on a pooled dataset over the general phase; saves checkpoints and a loss log."""
    out = Path(out)
    arch = arch_for(cfg)
    sched = schedule_for(cfg)
    tr = cfg.train
    log_rows: list = []
    locals_ = []
    for u, bg in enumerate(cfg.background_ids):
        rng = _rng(tr.seed, _TRAIN_LOCAL, u)
        x, c = _training_arrays(cfg, rng, bg, tr.local_dataset)
        model = Denoiser(arch, seed=_int_seed(tr.seed, _TRAIN_LOCAL, u, 1))
        locals_.append(_fit(model, x, c, tr.local_steps, cfg, rng, None, f"local_user{u}", log_rows))

    rng = _rng(tr.seed, _TRAIN_CLUSTER)
    parts = [_training_arrays(cfg, rng, bg, tr.cluster_dataset_per_user) for bg in cfg.background_ids]
    x = np.concatenate([p[0] for p in parts])
    c = np.concatenate([p[1] for p in parts])
    cluster = Denoiser(arch, seed=_int_seed(tr.seed, _TRAIN_CLUSTER, 1))
    cluster = _fit(cluster, x, c, tr.cluster_steps, cfg, rng, general_phase_range(sched, cfg.max_offload),
                   "cluster", log_rows)

    local_paths, cluster_path = _model_paths(cfg, out)
    cluster_path.parent.mkdir(parents=True, exist_ok=True)
    for m, p in zip(locals_, local_paths):
        save_checkpoint(m, p)
    save_checkpoint(cluster, cluster_path)
    write_csv(out / "train_log.csv", ["model", "step", "loss"], log_rows)
    return locals_, cluster


def ensure_models(cfg: ScenarioConfig, out) -> tuple[list[Denoiser], Denoiser]:
    local_paths, cluster_path = _model_paths(cfg, out)
    paths = [*local_paths, cluster_path]
    if all(p.exists() for p in paths):
        models = [load_checkpoint(p) for p in paths]
        if any(m.arch != arch_for(cfg) for m in models):
            raise ConfigurationError(f"checkpoints in {cluster_path.parent} do not match the configured model")
        return models[:-1], models[-1]
    if not cfg.train_if_missing:
        missing = [str(p) for p in paths if not p.exists()]
        raise ConfigurationError(f"missing model checkpoints {missing} and training is disabled")
    return train_models(cfg, out)


def psnr(img, ref) -> float:
    mse = float(np.mean((np.asarray(img) - np.asarray(ref)) ** 2))
    return float("inf") if mse == 0 else 10.0 * np.log10(1.0 / mse)


def run_case_study(cfg: ScenarioConfig, out, models=None) -> Path:
    """Semantics over the digital link, split denoising with AWGN on the handoff,
    then detection and image quality at each receiver."""
    out = Path(out)
    locals_, cluster = models if models is not None else ensure_models(cfg, out)
    sched = schedule_for(cfg)
    cs = cfg.case_study
    batch_model = BatchLatencyModel(cfg.scheduler.base_ms, cfg.scheduler.per_item_ms)
    h, w = cfg.scene.image_size
    rows = []
    for seed in cfg.seeds:
        for u, bg in enumerate(cfg.background_ids):
            scenes, images, _ = make_dataset(_rng(seed, _EVAL_SCENES, u), bg, cs.scenes_per_cell, cfg.model.k_max,
                                             **_scene_kw(cfg))
            decoded = []
            for sc in scenes:
                bits = encode_scene(sc.semantics)
                if bits.size != BITS_PER_BOX * sc.semantics.num_boxes:
                    raise AssertionError(f"scene {sc.semantics.scene_id}: {bits.size} bits for "
                                         f"{sc.semantics.num_boxes} boxes")
                decoded.append(decode_scene(bits, sc.semantics.scene_id))
            cond = np.stack([make_conditioning(d.boxes, cfg.model.k_max) for d in decoded])
            ref = background_texture(bg, (h, w))
            sample_seed = _int_seed(seed, _SAMPLING, u)
            req = OffloadRequest(f"user{u}", {k: 0.0 for k in cfg.offload_options}, cs.local_per_step_ms,
                                 cs.edge_per_step_ms)
            for k in sorted(cfg.offload_options):
                cache = None
                for snr in cfg.snr_db:
                    if k == 0 and cache is not None:
                        rows.append((seed, u, snr, k, *cache))
                        continue
                    channel = ChannelConfig(float(snr)) if k > 0 else None
                    gen = split_sample(cluster, locals_[u], cond, SplitPlan(k), sample_seed, sched, channel)
                    gen = to_image_space(gen).reshape(len(scenes), h, w)
                    ious, ps = [], []
                    for img, truth_img, sem in zip(gen, images, decoded):
                        eq = brightness_equalize(img, ref)
                        ious += match_boxes(sem.boxes, detect_boxes(eq, bg, cfg.scene.detect_margin))
                        ps.append(psnr(eq, truth_img))
                    b = cfg.num_users if k > 0 else 0
                    lat = user_latency(req, k, b, batch_model, sched.T)
                    cache = (float(np.mean(ious)) if ious else 1.0, float(np.mean(ps)), float(lat))
                    rows.append((seed, u, snr, k, *cache))
    return write_csv(out / "case_study.csv", METRICS_COLUMNS, rows)


def run_fl_experiment(cfg: ScenarioConfig, out) -> Path:
    """Federated cluster training with one client per user; round 0 holds initial losses."""
    out = Path(out)
    fc = cfg.fl
    arch = arch_for(cfg, fc.hidden)
    sched = schedule_for(cfg)
    general = general_phase_range(sched, cfg.max_offload)
    policy = AggregationPolicy(fc.weighting, fc.clip_norm)
    rows = []
    for seed in cfg.seeds:
        clients, ex, ec = [], [], []
        for u, bg in enumerate(cfg.background_ids):
            rng = _rng(seed, _FL, u)
            x, c = _training_arrays(cfg, rng, bg, fc.dataset_per_client)
            vx, vc = _training_arrays(cfg, rng, bg, fc.eval_per_client)
            ex.append(vx)
            ec.append(vc)
            clients.append(FLClient(f"user{u}", x, c, Denoiser(arch, seed=_int_seed(seed, _FL, u, 1)), vx, vc))
        eval_set = (np.concatenate(ex), np.concatenate(ec))
        cluster = ClusterState(Denoiser(arch, seed=_int_seed(seed, _FL, 99)).params)
        for cl in clients:
            rows.append((seed, 0, cl.client_id, evaluate_loss(cl.personalized, cl.eval_x0, cl.eval_cond, sched,
                                                              seed, general)))
        rows.append((seed, 0, "cluster", evaluate_loss(Denoiser(arch, cluster.params), *eval_set, sched, seed,
                                                       general)))
        rng = _rng(seed, _FL, 1000)
        for _ in range(fc.rounds):
            fl_round(clients, cluster, policy, fc.steps_per_round, rng, sched, arch=arch, batch_size=fc.batch_size,
                     optimizer=cfg.train.optimizer, lr=fc.lr, eval_set=eval_set, eval_seed=seed,
                     max_offload=cfg.max_offload)
        rows += [(seed, r, who, loss) for r, who, loss in cluster.history]
    return write_csv(out / "fl_losses.csv", ["seed", "round", "client_id", "loss"], rows)


def measured_instance(cfg: ScenarioConfig, path) -> list[OffloadRequest]:
    """One request per user with quality = mean IoU from a case-study CSV at the configured SNR."""
    sums: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if float(row["snr_db"]) != cfg.scheduler.quality_snr_db:
                continue
            key = (int(row["user"]), int(row["offload_steps"]))
            sums.setdefault(key, []).append(float(row["iou_mean"]))
    cs = cfg.case_study
    reqs = []
    for u in range(cfg.num_users):
        q = {k: float(np.mean(sums[(u, k)])) for k in cfg.offload_options if (u, k) in sums}
        if 0 not in q:
            raise ConfigurationError(f"{path} has no rows for user {u} at {cfg.scheduler.quality_snr_db} dB")
        reqs.append(OffloadRequest(f"user{u}", q, cs.local_per_step_ms, cs.edge_per_step_ms))
    return reqs


def run_scheduler_experiment(cfg: ScenarioConfig, out) -> Path:
    out = Path(out)
    sc = cfg.scheduler
    batch_model = BatchLatencyModel(sc.base_ms, sc.per_item_ms)
    metric = TradeoffMetric(sc.lam, cfg.model.T)
    instances = []
    for seed in cfg.seeds:
        for i in range(sc.instances):
            instances.append((seed, "random", i, random_instance(_rng(seed, _SCHED, i), sc.num_users,
                                                                 cfg.offload_options)))
    if sc.quality_csv:
        instances.append((cfg.seeds[0], "measured", 0, measured_instance(cfg, sc.quality_csv)))
    rows = []
    for seed, kind, i, reqs in instances:
        seq_a, seq_u = sequential_assign(reqs, metric, batch_model)
        seq_vec = " ".join(str(seq_a[r.user_id]) for r in sorted(reqs, key=lambda r: r.user_id))
        try:
            bf_a, bf_u = brute_force_assign(reqs, metric, batch_model, sc.search_cap)
        except SearchSpaceError:
            rows.append((seed, kind, i, len(reqs), sc.lam, "", seq_u, "", "", seq_vec, "sequential_only"))
            continue
        bf_vec = " ".join(str(bf_a[r.user_id]) for r in sorted(reqs, key=lambda r: r.user_id))
        rows.append((seed, kind, i, len(reqs), sc.lam, bf_u, seq_u, relative_gap(bf_u, seq_u), bf_vec, seq_vec, ""))
    return write_csv(out / "scheduler.csv", ["seed", "kind", "instance", "num_users", "lam", "brute_utility",
                                             "sequential_utility", "gap", "brute_assignment",
                                             "sequential_assignment", "flag"], rows)


def _drift_env(cfg: ScenarioConfig, profile) -> EncoderEnv:
    eo = cfg.encode_offload
    return EncoderEnv(EnvConfig(profile, data_scales=tuple(eo.data_scales), persistence=eo.persistence,
                                kl_threshold=eo.kl_threshold, kappa=eo.kappa, latency_scale=eo.latency_scale))


def run_encode_offload(cfg: ScenarioConfig, out) -> tuple[Path, Path]:
    """Frozen-environment convergence check and drifting-environment comparison
    against the all-local and all-edge static policies."""
    out = Path(out)
    eo = cfg.encode_offload
    q = QLearningConfig(eo.episode_length, eo.epsilon, eo.alpha, eo.gamma)
    frozen_rows, drift_rows = [], []
    for seed in cfg.seeds:
        for L in eo.frozen_L:
            rng = _rng(seed, _EO_FROZEN, L)
            profile = random_profile(rng, int(L))
            env = EncoderEnv(EnvConfig(profile, kl_threshold=eo.kl_threshold, kappa=eo.kappa,
                                       latency_scale=eo.latency_scale))
            cond = env.random_state(rng)
            fq, episodes = frozen_training(int(L))
            table = train_policy(env, episodes, rng, fq, frozen_start_states(env, cond))
            best = exhaustive_best_split(env, cond)
            for start in frozen_start_states(env, cond):
                final = greedy_rollout(env, table, start, 2 * int(L) + 2)[-1].split_point
                frozen_rows.append((seed, L, start.split_point, best, final, int(final == best)))

        for d in range(eo.drift_draws):
            rng = _rng(seed, _EO_DRIFT, d)
            profile = random_profile(rng)
            env = _drift_env(cfg, profile)
            table = train_policy(env, eo.episodes, rng, q)
            start = replace(env.random_state(rng), split_point=profile.L // 2)
            eval_seed = _int_seed(seed, _EO_DRIFT, d, 1)
            learned = evaluate_policy(env, lambda s: table.best_action(env.key(s)), start, eo.eval_steps, eval_seed)
            local = evaluate_policy(env, static_policy(env, profile.L), replace(start, split_point=profile.L),
                                    eo.eval_steps, eval_seed)
            edge = evaluate_policy(env, static_policy(env, 0), replace(start, split_point=0), eo.eval_steps,
                                   eval_seed)
            drift_rows.append((seed, d, profile.L, learned, local, edge, int(learned <= min(local, edge))))
    fp = write_csv(out / "encode_offload_frozen.csv",
                   ["seed", "L", "start_split", "best_split", "greedy_split", "match"], frozen_rows)
    dp = write_csv(out / "encode_offload_drift.csv",
                   ["seed", "draw", "L", "learned_ms", "all_local_ms", "all_edge_ms", "learned_wins"], drift_rows)
    return fp, dp
