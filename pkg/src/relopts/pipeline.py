"""Stage orchestration: each stage consumes upstream artifacts (refusing
mismatched config hashes), produces its own, and is individually rerunnable.

Stage order: collect -> train-metric -> train-fermat -> discover ->
train-options -> evaluate / sweep-options / plot; verify re-checks the whole
artifact chain.
"""

from __future__ import annotations

import csv
import hashlib
import os

import numpy as np

from .abstraction import Abstraction
from .artifacts import load_artifact, save_artifact
from .config import PipelineConfig, stage_hash
from .data import RandomJointPolicy, collect_dataset, load_dataset, replay_check, save_dataset
from .errors import ArtifactError, ConfigError
from .fermat import FermatEncoder, train_fermat_encoder
from .grid import GridSpec, JointState, factorize, reset
from .macdec import train_downstream
from .metric import LearnedDistance, train_learned_distance
from .options import IntrinsicRewardSpec, JointOption, OptionConfig, rollout_option, train_option
from .rng import stream
from .spectral import SpectralBasis, build_graph, eigendecompose, responsiveness_probe
from .stats import bootstrap_ci, iqm


def _file_digest(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()[:16]


def _p(out: str, name: str) -> str:
    return os.path.join(out, name)


# ---------------------------------------------------------------------------
# collect
# ---------------------------------------------------------------------------

def stage_collect(cfg: PipelineConfig, seed: int, out: str) -> str:
    cfg.validate()
    spec = cfg.env.spec(seed)
    ds = collect_dataset(spec, RandomJointPolicy(spec, seed), cfg.dataset_size, seed)
    os.makedirs(out, exist_ok=True)
    save_dataset(ds, _p(out, "dataset.fopt"))
    payload = {
        "file": "dataset.fopt",
        "file_digest": _file_digest(_p(out, "dataset.fopt")),
        "count": len(ds),
        "seed": seed,
    }
    return save_artifact(_p(out, "dataset.json"), "dataset", stage_hash(cfg, "dataset"), payload)


def _load_ds(cfg: PipelineConfig, out: str):
    art = load_artifact(_p(out, "dataset.json"), "dataset", stage_hash(cfg, "dataset"))
    path = _p(out, art["payload"]["file"])
    if not os.path.exists(path):
        raise ArtifactError(f"missing:dataset:{path}")
    if _file_digest(path) != art["payload"]["file_digest"]:
        raise ArtifactError(f"corrupt:dataset:{path}")
    return load_dataset(path), art


# ---------------------------------------------------------------------------
# training stages
# ---------------------------------------------------------------------------

def stage_train_metric(cfg: PipelineConfig, seed: int, out: str) -> str:
    ds, ds_art = _load_ds(cfg, out)
    dist = train_learned_distance(ds, cfg.metric, seed=seed)
    payload = dist.to_dict()
    return save_artifact(_p(out, "metric.json"), "metric", stage_hash(cfg, "metric"), payload,
                         upstream={"dataset": ds_art["self_hash"]})


def _load_metric(cfg: PipelineConfig, out: str):
    art = load_artifact(_p(out, "metric.json"), "metric", stage_hash(cfg, "metric"))
    return LearnedDistance.from_dict(art["payload"]), art


def stage_train_fermat(cfg: PipelineConfig, seed: int, out: str) -> str:
    ds, ds_art = _load_ds(cfg, out)
    dist, m_art = _load_metric(cfg, out)
    phi = train_fermat_encoder(ds, dist, cfg.fermat, seed=seed)
    return save_artifact(_p(out, "fermat.json"), "fermat", stage_hash(cfg, "fermat"), phi.to_dict(),
                         upstream={"dataset": ds_art["self_hash"], "metric": m_art["self_hash"]})


def _load_fermat(cfg: PipelineConfig, out: str):
    art = load_artifact(_p(out, "fermat.json"), "fermat", stage_hash(cfg, "fermat"))
    return FermatEncoder.from_dict(art["payload"]), art


# ---------------------------------------------------------------------------
# discovery
# ---------------------------------------------------------------------------

def _basis_payload(basis: SpectralBasis, graph, q: float) -> dict:
    edges = [[int(a), int(b)] for a in range(graph.n_nodes)
             for b in np.nonzero(graph.adjacency[a])[0] if b > a]
    def enc(key, raw):
        if raw:
            return [[int(a), int(b)] for (a, b) in key]
        return [int(v) for v in key]

    keys = sorted(basis.node_index, key=basis.node_index.get)
    return {
        "mode": basis.mode,
        "q": q,
        "nodes": [enc(k, basis.mode == "raw") for k in keys],
        "graph_nodes": [enc(k, graph.mode == "raw")
                        for k in sorted(graph.node_index, key=graph.node_index.get)],
        "edges": edges,
        "eigenvalues": basis.eigenvalues.tolist(),
        "eigenvectors": basis.eigenvectors.tolist(),
        "component_fraction": basis.component_fraction,
    }


def _basis_from_payload(p: dict) -> SpectralBasis:
    if p["mode"] == "raw":
        keys = [tuple(tuple(c) for c in k) for k in p["nodes"]]
    else:
        keys = [tuple(k) for k in p["nodes"]]
    return SpectralBasis(
        eigenvalues=np.asarray(p["eigenvalues"], dtype=np.float64),
        eigenvectors=np.asarray(p["eigenvectors"], dtype=np.float64),
        node_index={k: i for i, k in enumerate(keys)},
        mode=p["mode"],
        component_fraction=p["component_fraction"],
    )


def stage_discover(cfg: PipelineConfig, seed: int, out: str) -> str:
    ds, ds_art = _load_ds(cfg, out)
    upstream = {"dataset": ds_art["self_hash"]}
    if cfg.graph_mode == "raw":
        graph = build_graph(ds, None, None, q=cfg.quantization, mode="raw")
    else:
        dist, m_art = _load_metric(cfg, out)
        phi, f_art = _load_fermat(cfg, out)
        upstream["metric"] = m_art["self_hash"]
        upstream["fermat"] = f_art["self_hash"]
        graph = build_graph(ds, phi, dist, q=cfg.quantization, mode=cfg.graph_mode,
                            symmetrize=cfg.symmetrize_graph)
    basis = eigendecompose(graph, k_max=cfg.k_eigenvectors)
    h = save_artifact(_p(out, "basis.json"), "basis", stage_hash(cfg, "basis"),
                      _basis_payload(basis, graph, cfg.quantization), upstream=upstream)

    if cfg.graph_mode != "raw":
        # capped raw-joint contrast basis for the responsiveness probe
        sub = ds.transitions
        cap = cfg.raw_probe_nodes
        seen: set = set()
        cut = len(sub)
        for i, tr in enumerate(sub):
            seen.add(tr.state.agent_cells)
            seen.add(tr.next_state.agent_cells)
            if len(seen) >= cap:
                cut = i + 1
                break
        from .data import TransitionDataset
        raw_ds = TransitionDataset(spec=ds.spec, transitions=list(sub[:cut]), seed=ds.seed)
        raw_graph = build_graph(raw_ds, None, None, mode="raw")
        k_raw = min(cfg.k_eigenvectors, raw_graph.n_nodes - 2)
        raw_basis = eigendecompose(raw_graph, k_max=max(1, k_raw))
        save_artifact(_p(out, "basis_raw.json"), "basis", stage_hash(cfg, "basis"),
                      _basis_payload(raw_basis, raw_graph, cfg.quantization),
                      upstream={"dataset": ds_art["self_hash"]})
    return h


def _load_basis(cfg: PipelineConfig, out: str, name: str = "basis.json"):
    art = load_artifact(_p(out, name), "basis", stage_hash(cfg, "basis"))
    return _basis_from_payload(art["payload"]), art


def load_abstraction(cfg: PipelineConfig, out: str) -> Abstraction:
    dist, _ = _load_metric(cfg, out)
    phi, _ = _load_fermat(cfg, out)
    basis, _ = _load_basis(cfg, out)
    return Abstraction(phi, dist, q=cfg.quantization,
                       scalar_mode=cfg.graph_mode == "relative-scalar", basis=basis)


# ---------------------------------------------------------------------------
# options
# ---------------------------------------------------------------------------

def option_id_list(cfg: PipelineConfig) -> list[tuple[int, int]]:
    """(eigen_index, sign) pairs in supply order: ascending index, + then -."""
    pairs = []
    for k in range(2, cfg.k_eigenvectors + 2):
        pairs.append((k, +1))
        pairs.append((k, -1))
    return pairs


def stage_train_options(cfg: PipelineConfig, seed: int, out: str) -> str:
    abstraction = load_abstraction(cfg, out)
    _, b_art = _load_basis(cfg, out)
    spec = cfg.env.spec()
    train_spec = GridSpec(
        width=spec.width, height=spec.height, n_agents=spec.n_agents,
        agent_types=spec.agent_types, agent_levels=spec.agent_levels,
        apples=spec.apples, forced_coop=spec.forced_coop, walls=spec.walls,
        horizon=cfg.option_horizon, seed=spec.seed,
    )
    os.makedirs(_p(out, "options"), exist_ok=True)
    manifest = []
    for eigen_index, sign in option_id_list(cfg):
        if eigen_index - 1 > abstraction.basis.n_nontrivial:
            break
        reward = IntrinsicRewardSpec(eigen_index, sign)
        opt = train_option(train_spec, reward, abstraction, cfg.option, seed=seed)
        fname = f"options/{opt.id.replace('+', 'p').replace('-', 'm')}.json"
        save_artifact(_p(out, fname), "option", stage_hash(cfg, "options"), opt.to_dict(),
                      upstream={"basis": b_art["self_hash"]})
        manifest.append({"id": opt.id, "file": fname,
                         "eigen_index": eigen_index, "sign": sign})
    return save_artifact(_p(out, "options.json"), "options", stage_hash(cfg, "options"),
                         {"options": manifest}, upstream={"basis": b_art["self_hash"]})


def load_options(cfg: PipelineConfig, out: str, count: int | None = None) -> list[JointOption]:
    art = load_artifact(_p(out, "options.json"), "options", stage_hash(cfg, "options"))
    entries = art["payload"]["options"]
    if count is not None:
        entries = entries[:count]
    spec = cfg.env.spec()
    opts = []
    for e in entries:
        o_art = load_artifact(_p(out, e["file"]), "option", stage_hash(cfg, "options"))
        opts.append(JointOption.from_dict(o_art["payload"], spec,
                                          OptionConfig(**vars(cfg.option))))
    return opts


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _run_arm(cfg: PipelineConfig, out: str, count: int):
    """Downstream training across seeds with the first `count` options."""
    options = load_options(cfg, out, count) if count else []
    abstraction = load_abstraction(cfg, out) if options else None
    spec = cfg.env.spec()
    rows = []
    finals = []
    for seed in cfg.seeds:
        _, summary = train_downstream(spec, options, cfg.downstream, seed,
                                      abstraction=abstraction)
        finals.append(summary["final_fraction"])
        for point in summary["curve"]:
            rows.append({"seed": seed, "step": point["step"],
                         "fraction": point["fraction"], "return": point["return"]})
    lo, hi = bootstrap_ci(finals, n_resamples=2000, rng=stream(0, f"bootstrap/{count}"))
    report = {
        "count": count,
        "per_seed_final": finals,
        "iqm": iqm(finals),
        "ci95": [lo, hi],
    }
    return rows, report


def _write_curves(path: str, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["seed", "step", "fraction", "return"])
        w.writeheader()
        w.writerows(rows)


def stage_evaluate(cfg: PipelineConfig, seed: int, out: str,
                   option_count: int | None = None) -> str:
    n_all = len(option_id_list(cfg))
    count = n_all if option_count is None else option_count
    if count:
        load_options(cfg, out, count)  # fail fast on missing upstream
    rows, report = _run_arm(cfg, out, count)
    _write_curves(_p(out, f"curves_count{count}.csv"), rows)
    return save_artifact(_p(out, f"report_count{count}.json"), "report",
                         stage_hash(cfg, "report"), report)


def stage_sweep_options(cfg: PipelineConfig, seed: int, out: str,
                        counts: list[int] | None = None) -> str:
    if counts is None:
        counts = [0, 2, len(option_id_list(cfg))]
    all_rows = []
    table = []
    for count in sorted(set(counts)):
        rows, report = _run_arm(cfg, out, count)
        for r in rows:
            r["count"] = count
        all_rows.extend(rows)
        table.append(report)
    with open(_p(out, "sweep.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["count", "seed", "step", "fraction", "return"])
        w.writeheader()
        w.writerows(all_rows)
    best = max(t["iqm"] for t in table)
    saturation_flag = table[-1]["iqm"] < best - 1e-12 if len(table) > 1 else False
    payload = {"table": table, "max_count_underperforms": bool(saturation_flag)}
    return save_artifact(_p(out, "sweep.json"), "sweep", stage_hash(cfg, "sweep"), payload)


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------

def eigen_field(cfg: PipelineConfig, basis: SpectralBasis, spec: GridSpec,
                teammates: list[tuple[int, int]], column: int,
                abstraction: Abstraction | None, free_agent: int | None = None) -> np.ndarray:
    """Eigenvector entry as the free agent sweeps the grid; NaN on blocked cells.

    Teammates fill the other agent slots in order; `free_agent` defaults to
    the last slot.
    """
    n = spec.n_agents
    if len(teammates) != n - 1:
        raise ConfigError("need n_agents - 1 teammate cells")
    free = n - 1 if free_agent is None else free_agent
    apple_cells = {c for c, _ in spec.apples}
    field = np.full((spec.width, spec.height), np.nan)
    cells = []
    coords = []
    for x in range(spec.width):
        for y in range(spec.height):
            c = (x, y)
            if c in spec.walls or c in apple_cells or c in teammates:
                continue
            slots = list(teammates)
            slots.insert(free, c)
            cells.append(tuple(slots))
            coords.append(c)
    if basis.mode == "raw":
        for c, slots in zip(coords, cells):
            field[c] = basis.lookup(slots)[column]
        return field
    states = np.asarray(
        [factorize(JointState(slots, tuple(spec.agent_levels), frozenset(), 0), spec)
         for slots in cells], dtype=np.float64)
    from .fermat import rep_values
    values = rep_values(states, abstraction.phi, abstraction.dist)
    if abstraction.scalar_mode:
        values = values.sum(axis=1, keepdims=True)
    quant = np.rint(values / abstraction.q).astype(int)
    for c, qk in zip(coords, quant):
        field[c] = basis.lookup(tuple(qk))[column]
    return field


def stage_plot(cfg: PipelineConfig, seed: int, out: str) -> dict:
    from .svgplot import write_heatmap
    basis, _ = _load_basis(cfg, out)
    spec = cfg.env.spec()
    abstraction = load_abstraction(cfg, out) if cfg.graph_mode != "raw" else None
    raw_basis = None
    if os.path.exists(_p(out, "basis_raw.json")):
        raw_basis, _ = _load_basis(cfg, out, "basis_raw.json")

    conditionings = [[tuple(c) for c in group] for group in cfg.conditioning]
    plots_dir = _p(out, "plots")
    os.makedirs(plots_dir, exist_ok=True)
    n_vec = min(3, basis.n_nontrivial)
    fields: dict[str, dict] = {"relative": {}, "raw": {}}
    emitted = []
    for gi, group in enumerate(conditionings):
        marks = [(x, y, "#222222") for (x, y) in group]
        for k in range(1, n_vec + 1):
            f = eigen_field(cfg, basis, spec, group, k, abstraction)
            fields["relative"].setdefault(gi, {})[k] = f
            path = os.path.join(plots_dir, f"eig{k + 1}_{cfg.graph_mode}_cond{gi}.svg")
            write_heatmap(path, f, title=f"e{k + 1} ({cfg.graph_mode}) teammates {group}",
                          marks=marks)
            emitted.append(path)
            if raw_basis is not None and raw_basis.n_nontrivial >= k:
                fr = eigen_field(cfg, raw_basis, spec, group, k, None)
                fields["raw"].setdefault(gi, {})[k] = fr
                path = os.path.join(plots_dir, f"eig{k + 1}_raw_cond{gi}.svg")
                write_heatmap(path, fr, title=f"e{k + 1} (raw) teammates {group}", marks=marks)
                emitted.append(path)

    result = {"plots": emitted, "responsiveness": None}
    if len(conditionings) >= 2:
        rel = [
            responsiveness_probe(np.nan_to_num(fields["relative"][0][k]),
                                 np.nan_to_num(fields["relative"][1][k]))
            for k in sorted(fields["relative"][0])
        ]
        raw = [
            responsiveness_probe(np.nan_to_num(fields["raw"][0][k]),
                                 np.nan_to_num(fields["raw"][1][k]))
            for k in sorted(fields["raw"].get(0, {}))
        ]
        result["responsiveness"] = {"relative": rel, "raw": raw}
        save_artifact(_p(out, "responsiveness.json"), "responsiveness",
                      stage_hash(cfg, "responsiveness"), result["responsiveness"])
    return result


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def stage_verify(cfg: PipelineConfig, seed: int, out: str) -> list[str]:
    """Recheck the artifact chain; returns a list of failures (empty = pass)."""
    failures = []

    def check(label, fn):
        try:
            fn()
        except Exception as exc:  # noqa: BLE001 - verify reports, never raises
            failures.append(f"{label}: {exc}")

    ds_box = {}

    def _dataset():
        ds, _ = _load_ds(cfg, out)
        ds_box["ds"] = ds
        if not replay_check(ds):
            raise AssertionError("dataset replay mismatch")

    check("dataset", _dataset)
    check("metric", lambda: _load_metric(cfg, out))
    check("fermat", lambda: _load_fermat(cfg, out))

    def _basis():
        art = load_artifact(_p(out, "basis.json"), "basis", stage_hash(cfg, "basis"))
        p = art["payload"]
        basis = _basis_from_payload(p)
        keys = sorted(basis.node_index, key=basis.node_index.get)
        n = len(keys)
        graph_keys = p["graph_nodes"]
        adj = np.zeros((len(graph_keys), len(graph_keys)))
        for a, b in p["edges"]:
            adj[a, b] = adj[b, a] = 1.0
        # map basis rows onto graph indices
        if p["mode"] == "raw":
            gk = [tuple(tuple(c) for c in k) for k in graph_keys]
        else:
            gk = [tuple(k) for k in graph_keys]
        gidx = {k: i for i, k in enumerate(gk)}
        rows = [gidx[k] for k in keys]
        sub = adj[np.ix_(rows, rows)]
        lap = np.diag(sub.sum(axis=1)) - sub
        res = np.abs(lap @ basis.eigenvectors - basis.eigenvectors * basis.eigenvalues).max()
        if res > 1e-6:
            raise AssertionError(f"basis residual {res:.2e}")
        gram = basis.eigenvectors.T @ basis.eigenvectors
        if np.abs(gram - np.eye(len(basis.eigenvalues))).max() > 1e-6:
            raise AssertionError("basis not orthonormal")

    check("basis", _basis)

    def _options():
        options = load_options(cfg, out)
        abstraction = load_abstraction(cfg, out)
        spec = cfg.env.spec()
        for opt in options[:4]:
            ro = rollout_option(opt, reset(spec, seed=1), spec, abstraction)
            drift = abs(sum(ro.rewards) - (ro.eigen_last - ro.eigen_first))
            if drift > 1e-9:
                raise AssertionError(f"telescoping broken for {opt.id}: {drift}")

    if os.path.exists(_p(out, "options.json")):
        check("options", _options)
    return failures
