#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
cli.py - 命令列介面

使用方式: python -m scripts.cli [--config FILE] [--seed N] [--threads N] [--verbose] <子命令> ...

子命令：
  synth    由規格檔產生合成資料集
  align    對清單中的每個實例做模板對齊
  mean     學習物種平均位移 dv
  basis    學習個體基底並重新學習 PCA
  aves     由多個物種模型建立多物種形狀空間
  fit      以固定模型擬合清單中的實例
  eval     計算預測參數相對清單標註的 PCK / IoU
  analyze  形狀空間嵌入、Pagel's λ 與祖先狀態
  export   將平均形狀、主成分掃描或姿勢網格寫成 OBJ

錯誤時輸出一行 `error code=<code> message=<text>` 到 stderr，結束碼 1。
"""

import argparse
import dataclasses
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

from scripts import build_synth
from scripts.config import PipelineConfig, load_config
from scripts.errors import ModelMismatchError, ShapeError
from scripts.eval_metrics import embed_2d
from scripts.eval_phylo import TraitMatrix, ancestral_states, load_tree, pagels_lambda, read_traits
from scripts.fit_align import align_instance, build_synth_db, evaluate_fit
from scripts.fit_shape import (MultiSpeciesModel, SpeciesModel, build_multispecies, build_species_model,
                               fit_individuals, fit_model_to_instance, fit_species_mean)
from scripts.io_files import (Manifest, read_manifest, read_model, read_params, write_csv, write_json, write_model,
                              write_params)
from scripts.model_annotation import AnnotatedInstance
from scripts.model_energy import default_prior
from scripts.model_faiss import SynthDatabase, load_database, save_database
from scripts.model_mesh import PoseParams, ShapeState, pose_mesh
from scripts.model_optim import TraceEntry, trace_frame
from scripts.model_render import Camera
from scripts.model_template import TemplateModel, load_template, make_synthetic_bird, write_obj

logger = logging.getLogger(__name__)

PROGRESS_INTERVAL = 10  # 秒
PARAMS_DIR = "params"
DB_DIR = "synth_db"

# 工作行程共用的唯讀資料（樣板、先驗、相機、設定、資料庫、模型）
_WORKER: Dict[str, object] = {}


# ---------------------------------------------------------------------------
# 共用
# ---------------------------------------------------------------------------

def _db_dir(out_dir: Path, config: PipelineConfig) -> Path:
    return out_dir / f"{DB_DIR}_seed{config.seed}_n{config.db_size}"


def _report_path(path: Path, suffix: str) -> Path:
    return path.with_name(f"{path.stem}.{suffix}")


def load_dataset(manifest_path: Path) -> Tuple[Manifest, TemplateModel]:
    manifest = read_manifest(manifest_path)
    template = load_template(manifest.template_path())
    if manifest.template_hash and manifest.template_hash != template.template_hash:
        raise ModelMismatchError(f"清單記錄的模板雜湊與 {manifest.template_path()} 不一致")
    return manifest, template


def ensure_synth_db(template: TemplateModel, camera: Camera, config: PipelineConfig,
                    cache_dir: Optional[Path]) -> SynthDatabase:
    """載入快取的合成資料庫；不存在或與模板/大小不符時重新建立"""
    if cache_dir is not None:
        db = load_database(cache_dir)
        if db is not None and db.template_hash == template.template_hash and len(db) == config.db_size:
            return db
    db = build_synth_db(template, default_prior(template), config.db_size, config.seed, camera,
                        config.canonical_depth, config.prior_scale)
    if cache_dir is not None:
        save_database(db, cache_dir)
    return db


def load_aligned(manifest: Manifest, align_dir: Path) -> List[Tuple[AnnotatedInstance, PoseParams]]:
    """讀取對齊結果，排除失敗的實例"""
    aligned, skipped = [], []
    for entry in manifest.instances:
        path = Path(align_dir) / PARAMS_DIR / f"{entry.id}.json"
        if not path.exists():
            skipped.append(entry.id)
            continue
        _, params, _, diag = read_params(path)
        if diag.get("failed"):
            skipped.append(entry.id)
            continue
        aligned.append((manifest.load_instance(entry), params))
    if skipped:
        logger.warning("略過 %d 個未對齊或對齊失敗的實例: %s", len(skipped), ", ".join(skipped))
    return aligned


def _init_worker(context: dict, threads: int = 1):
    torch.set_num_threads(threads)
    _WORKER.clear()
    _WORKER.update(context)


def _failure(instance_id: str, error: Exception) -> dict:
    return {"id": instance_id, "pck05": float("nan"), "iou": float("nan"), "objective": float("nan"),
            "failed": True, "reason": f"{getattr(error, 'code', 'error')}: {error}"}


def _align_task(instance: AnnotatedInstance):
    c = _WORKER
    try:
        params, diag = align_instance(instance, c["template"], c["prior"], c["camera"], c["config"], c["db"])
    except ShapeError as e:
        logger.warning("實例 %s 無法對齊: %s", instance.id, e)
        return instance.id, None, None, _failure(instance.id, e)
    result = diag.to_dict()
    result["trace"] = [dataclasses.asdict(t) for t in diag.trace]
    return instance.id, params, None, result


def _fit_task(instance: AnnotatedInstance):
    c = _WORKER
    try:
        params, beta, metrics = fit_model_to_instance(c["model"], c["template"], instance, c["prior"], c["camera"],
                                                      c["config"], c["db"], freeze_beta=c["freeze_beta"])
    except ShapeError as e:
        logger.warning("實例 %s 無法擬合: %s", instance.id, e)
        return instance.id, None, None, _failure(instance.id, e)
    return instance.id, params, beta, metrics


def run_instances(task: Callable, instances: Sequence[AnnotatedInstance], context: dict, threads: int) -> list:
    """逐實例執行 task；threads > 1 時使用行程池。結果依實例 id 排序"""
    total = len(instances)
    results = []
    start_time = time.time()
    last_log_time = start_time

    def progress(done: int):
        nonlocal last_log_time
        now = time.time()
        if now - last_log_time >= PROGRESS_INTERVAL or done >= total:
            elapsed = now - start_time
            rate = done / elapsed if elapsed > 0 else 0.0
            remaining = (total - done) / rate if rate > 0 else 0.0
            print(f"處理進度: {done / total * 100:.1f}% [{done}/{total}] 速度: {rate:.2f} 實例/秒, "
                  f"預估剩餘時間: {int(remaining)}秒")
            last_log_time = now

    if threads <= 1:
        _init_worker(context, torch.get_num_threads())
        for instance in instances:
            results.append(task(instance))
            progress(len(results))
    else:
        with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker, initargs=(context,)) as executor:
            future_to_id = {executor.submit(task, instance): instance.id for instance in instances}
            for future in as_completed(future_to_id):
                results.append(future.result())
                progress(len(results))
    return sorted(results, key=lambda r: r[0])


def write_instance_results(out_dir: Path, results: list) -> pd.DataFrame:
    """寫出 params/<id>.json，回傳逐實例的指標表"""
    rows = []
    for instance_id, params, beta, diag in results:
        if params is not None:
            write_params(out_dir / PARAMS_DIR / f"{instance_id}.json", instance_id, params, beta,
                         {k: v for k, v in diag.items() if k != "trace"})
        rows.append({k: diag.get(k) for k in ("id", "pck05", "iou", "objective", "failed", "reason")})
    return pd.DataFrame(rows, columns=["id", "pck05", "iou", "objective", "failed", "reason"])


def _summary(frame: pd.DataFrame) -> dict:
    ok = frame[~frame["failed"].astype(bool)]
    return {"n": int(len(frame)), "n_failed": int(len(frame) - len(ok)),
            "mean_pck05": float(frame["pck05"].mean()), "mean_iou": float(frame["iou"].mean()),
            "failed": frame.loc[frame["failed"].astype(bool), "id"].tolist()}


def _trace_table(results: list) -> pd.DataFrame:
    frames = []
    for instance_id, _, _, diag in results:
        trace = [TraceEntry(**t) for t in diag.get("trace", [])]
        if trace:
            frames.append(trace_frame(trace).assign(id=instance_id))
    if not frames:
        return pd.DataFrame(columns=["id", "stage", "iteration", "objective"])
    table = pd.concat(frames, ignore_index=True)
    return table[["id"] + [c for c in table.columns if c != "id"]]


def _model_shape(model, template: TemplateModel) -> ShapeState:
    if model is None:
        return ShapeState.zeros(template)
    model.check_template(template)
    return model.shape_state(template)


# ---------------------------------------------------------------------------
# 子命令
# ---------------------------------------------------------------------------

def cmd_synth(args, config: PipelineConfig) -> int:
    spec = build_synth.load_spec(args.spec)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    template = load_template(args.template) if args.template else make_synthetic_bird()
    prior = default_prior(template)
    out_dir = Path(args.out)
    if args.tree:
        specs = build_synth.simulate_clade(load_tree(args.tree), spec, args.clade_scale, spec.seed)
        build_synth.main(template, specs, prior, out_dir)
    else:
        build_synth.generate_synthetic_collection(template, spec, prior, out_dir)
    return 0


def cmd_align(args, config: PipelineConfig) -> int:
    manifest, template = load_dataset(args.manifest)
    out_dir = Path(args.out)
    camera = manifest.camera
    db = ensure_synth_db(template, camera, config, Path(args.db) if args.db else _db_dir(out_dir, config))
    instances = manifest.load_instances()
    context = {"template": template, "prior": default_prior(template), "camera": camera, "config": config, "db": db}
    results = run_instances(_align_task, instances, context, config.threads)
    frame = write_instance_results(out_dir, results)
    write_csv(out_dir / "align_report.csv", frame)
    if args.trace:
        write_csv(out_dir / "align_trace.csv", _trace_table(results))
    summary = _summary(frame)
    write_json(out_dir / "align_report.json", summary)
    print(f"對齊完成: {summary['n']} 個實例, 失敗 {summary['n_failed']} 個, "
          f"平均 PCK05 {summary['mean_pck05']:.4f}, 平均 IoU {summary['mean_iou']:.4f}")
    return 0


def cmd_mean(args, config: PipelineConfig) -> int:
    manifest, template = load_dataset(args.manifest)
    aligned = load_aligned(manifest, args.align)
    dv, report = fit_species_mean(aligned, template, manifest.camera, config)
    model = SpeciesModel(template.template_hash, dv, np.zeros((dv.size, 0)), np.zeros((len(aligned), 0)),
                         [inst.id for inst, _ in aligned], "+".join(manifest.species()))
    out = Path(args.out)
    write_model(out, model)
    write_json(_report_path(out, "report.json"), {**report.summary(), "ids": model.sample_ids,
                                                  "iou_before_each": report.iou_before,
                                                  "iou_after_each": report.iou_after})
    print(f"平均形狀: IoU {np.mean(report.iou_before):.4f} → {np.mean(report.iou_after):.4f}")
    return 0


def cmd_basis(args, config: PipelineConfig) -> int:
    manifest, template = load_dataset(args.manifest)
    mean_model = read_model(args.mean)
    if not isinstance(mean_model, SpeciesModel):
        raise ShapeError(f"{args.mean} 不是物種模型", code="model-kind")
    mean_model.check_template(template)
    aligned = load_aligned(manifest, args.align)
    k = config.n_basis
    basis, betas, report = fit_individuals(aligned, template, manifest.camera, mean_model.dv, k, config,
                                           seed=config.seed)
    model = build_species_model(template, mean_model.dv, basis, betas, [inst.id for inst, _ in aligned],
                                mean_model.species, k)
    out = Path(args.out)
    write_model(out, model)
    write_json(_report_path(out, "report.json"), {**report.summary(), "pca_variances": model.variances.tolist()})
    print(f"個體基底 K={k}: IoU {np.mean(report.iou_before):.4f} → {np.mean(report.iou_after):.4f}, "
          f"PCA 秩 {len(model.variances)}")
    return 0


def cmd_aves(args, config: PipelineConfig) -> int:
    template = load_template(args.template)
    models = []
    for path in args.models:
        model = read_model(path)
        if not isinstance(model, SpeciesModel):
            raise ShapeError(f"{path} 不是物種模型", code="model-kind")
        models.append(model)
    aves = build_multispecies(models, template, normalize=config.normalize, rank=config.aves_rank,
                              source=config.aves_source)
    write_model(Path(args.out), aves)
    print(f"多物種模型: {len(aves.species)} 個物種, 秩 {len(aves.variances)}")
    return 0


def cmd_fit(args, config: PipelineConfig) -> int:
    manifest, template = load_dataset(args.manifest)
    model = read_model(args.model) if args.model else None
    if model is not None:
        model.check_template(template)
        if model.normalized:
            raise ShapeError(f"{args.model} 為單位身體長度正規化的模型，不能用於擬合", code="normalized-model")
    out_dir = Path(args.out)
    camera = manifest.camera
    db = ensure_synth_db(template, camera, config, Path(args.db) if args.db else _db_dir(out_dir, config))
    context = {"template": template, "prior": default_prior(template), "camera": camera, "config": config,
               "db": db, "model": model, "freeze_beta": args.freeze_beta}
    results = run_instances(_fit_task, manifest.load_instances(), context, config.threads)
    frame = write_instance_results(out_dir, results)
    species = {e.id: e.species for e in manifest.instances}
    frame.insert(1, "species", [species[i] for i in frame["id"]])
    write_csv(out_dir / "metrics.csv", frame)
    summary = _summary(frame)
    print(f"擬合完成: 平均 PCK05 {summary['mean_pck05']:.4f}, 平均 IoU {summary['mean_iou']:.4f}")
    return 0


def cmd_eval(args, config: PipelineConfig) -> int:
    manifest, template = load_dataset(args.manifest)
    model = read_model(args.model) if args.model else None
    shape = _model_shape(model, template)
    rows = []
    for entry in manifest.instances:
        path = Path(args.pred) / PARAMS_DIR / f"{entry.id}.json"
        if not path.exists():
            logger.warning("實例 %s 沒有預測檔", entry.id)
            continue
        _, params, beta, _ = read_params(path)
        if shape.n_basis == 0:
            beta = None
        instance = manifest.load_instance(entry)
        p, i = evaluate_fit(template, params, shape, beta, manifest.camera, instance, config.pck_threshold)
        rows.append({"id": entry.id, "species": entry.species, "pck05": p, "iou": i})
    if not rows:
        raise ShapeError(f"{args.pred} 中沒有任何預測檔", code="missing-file")
    frame = pd.DataFrame(rows)
    write_csv(Path(args.out), frame)
    print(f"評估 {len(frame)} 個實例: 平均 PCK05 {frame['pck05'].mean():.4f}, 平均 IoU {frame['iou'].mean():.4f}")
    return 0


def _trait_sets(args) -> Dict[str, TraitMatrix]:
    """要分析的性狀集合：主成分係數與其 2D 嵌入，或使用者提供的 CSV"""
    if args.traits:
        traits = read_traits(args.traits)
    else:
        model = read_model(args.model)
        if not isinstance(model, MultiSpeciesModel):
            raise ShapeError(f"{args.model} 不是多物種模型", code="model-kind")
        coeffs = model.coefficients[:, :args.components] if args.components else model.coefficients
        traits = TraitMatrix(list(model.species), coeffs, [f"pc{i}" for i in range(coeffs.shape[1])])
    embedding = TraitMatrix(traits.species, embed_2d(traits.values), ["x", "y"])
    return {"traits": traits, "embedding": embedding}


def plot_embedding(path: Path, embedding: TraitMatrix):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "embedding"

    fig, ax = plt.subplots(figsize=(6, 6))
    ax.scatter(embedding.values[:, 0], embedding.values[:, 1], s=20)
    for name, (x, y) in zip(embedding.species, embedding.values):
        ax.annotate(name, (x, y), fontsize=7, xytext=(3, 3), textcoords="offset points")
    ax.set_xlabel("axis 1")
    ax.set_ylabel("axis 2")
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", bbox_inches="tight", metadata={"Date": None})
    plt.close(fig)


def cmd_analyze(args, config: PipelineConfig) -> int:
    tree = load_tree(args.tree)
    sets = _trait_sets(args)
    out_dir = Path(args.out)
    embedding = sets["embedding"]
    write_csv(out_dir / "embedding.csv", pd.DataFrame({"species": embedding.species, "x": embedding.values[:, 0],
                                                       "y": embedding.values[:, 1]}))
    plot_embedding(out_dir / "embedding.svg", embedding)

    per_trait, summary, ancestral = [], [], []
    for name, traits in sets.items():
        result = pagels_lambda(tree, traits)
        frame = result.to_frame()
        frame.insert(0, "set", name)
        per_trait.append(frame)
        summary.append({"set": name, "mean_lambda": result.mean_lambda, "std_lambda": result.std_lambda,
                        "pooled_p": result.pooled_p})
        states = ancestral_states(tree, traits)
        states.insert(0, "set", name)
        ancestral.append(states.melt(id_vars=["set", "node"], var_name="trait", value_name="value"))
        print(f"{name}: λ = {result.mean_lambda:.3f} ± {result.std_lambda:.3f}, p = {result.pooled_p:.3g}")
    write_csv(out_dir / "lambda.csv", pd.concat(per_trait, ignore_index=True))
    write_csv(out_dir / "lambda_summary.csv", pd.DataFrame(summary))
    write_csv(out_dir / "ancestral.csv", pd.concat(ancestral, ignore_index=True))
    return 0


def cmd_export(args, config: PipelineConfig) -> int:
    template = load_template(args.template)
    model = read_model(args.model) if args.model else None
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.mode == "mean":
        vertices = template.vertices if model is None else _model_shape(model, template).dv + template.vertices
        write_obj(out_dir / "mean.obj", vertices, template.faces)
        written = ["mean.obj"]
    elif args.mode == "pca":
        if model is None:
            raise ShapeError("--mode pca 需要 --model", code="usage")
        model.check_template(template)
        pca = model.pca() if isinstance(model, MultiSpeciesModel) else model.components()
        c = args.component
        if not 0 <= c < pca.rank:
            raise ShapeError(f"主成分 {c} 超出模型秩 {pca.rank}", code="component")
        offset = args.std * np.sqrt(pca.variances[c]) * pca.components[:, c]
        written = []
        for sign, label in ((1.0, "plus"), (-1.0, "minus")):
            name = f"pc{c}_{label}{args.std:g}std.obj"
            write_obj(out_dir / name, (pca.mean + sign * offset).reshape(-1, 3), template.faces)
            written.append(name)
    else:
        if not args.params:
            raise ShapeError("--mode posed 需要 --params", code="usage")
        shape = _model_shape(model, template)
        instance_id, params, beta, _ = read_params(args.params)
        with torch.no_grad():
            posed = pose_mesh(template, params, shape, beta if shape.n_basis else None)
        name = f"{instance_id}.obj"
        write_obj(out_dir / name, posed.numpy_vertices(), template.faces)
        written = [name]
    print(f"寫出: {', '.join(written)}")
    return 0


# ---------------------------------------------------------------------------
# 參數解析
# ---------------------------------------------------------------------------

COMMANDS = {
    "synth": cmd_synth, "align": cmd_align, "mean": cmd_mean, "basis": cmd_basis, "aves": cmd_aves,
    "fit": cmd_fit, "eval": cmd_eval, "analyze": cmd_analyze, "export": cmd_export,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scripts.cli", description="鳥類形狀擷取流程")
    parser.add_argument("--config", type=Path, help="key=value 設定檔")
    parser.add_argument("--seed", type=int, help="亂數種子")
    parser.add_argument("--threads", type=int, help="工作行程數與 torch 執行緒數")
    parser.add_argument("--verbose", action="store_true", help="輸出 DEBUG 訊息")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="產生合成資料集")
    p.add_argument("spec", type=Path, help="SyntheticSpeciesSpec JSON")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--template", type=Path, help="模板 OBJ（預設使用程序化合成鳥）")
    p.add_argument("--tree", type=Path, help="Newick 系統樹：每個葉節點產生一個物種")
    p.add_argument("--clade-scale", type=float, default=0.02, help="配方幅度布朗運動的尺度")

    p = sub.add_parser("align", help="模板對齊")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--db", type=Path, help="合成資料庫快取資料夾")
    p.add_argument("--trace", action="store_true", help="另外寫出逐迭代的目標值 align_trace.csv")

    p = sub.add_parser("mean", help="物種平均形狀")
    p.add_argument("manifest", type=Path)
    p.add_argument("--align", type=Path, required=True, help="align 的輸出資料夾")
    p.add_argument("--out", type=Path, required=True, help="模型 JSON")

    p = sub.add_parser("basis", help="個體基底與 PCA")
    p.add_argument("manifest", type=Path)
    p.add_argument("--align", type=Path, required=True)
    p.add_argument("--mean", type=Path, required=True, help="mean 的輸出模型")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--k", type=int, dest="n_basis", help="基底數量")

    p = sub.add_parser("aves", help="多物種形狀空間")
    p.add_argument("models", type=Path, nargs="+")
    p.add_argument("--template", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--rank", type=int, dest="aves_rank")
    p.add_argument("--raw", dest="normalize", action="store_const", const=False, help="不做身體長度正規化")
    p.add_argument("--source", dest="aves_source", choices=("means", "individuals"))

    p = sub.add_parser("fit", help="以固定模型擬合實例")
    p.add_argument("manifest", type=Path)
    p.add_argument("--model", type=Path, help="模型 JSON（省略時只用模板）")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--db", type=Path)
    p.add_argument("--freeze-beta", action="store_true")

    p = sub.add_parser("eval", help="PCK / IoU 評估")
    p.add_argument("manifest", type=Path)
    p.add_argument("--pred", type=Path, required=True, help="含 params/ 的資料夾")
    p.add_argument("--model", type=Path)
    p.add_argument("--out", type=Path, required=True, help="CSV")

    p = sub.add_parser("analyze", help="嵌入、Pagel's λ 與祖先狀態")
    p.add_argument("model", type=Path, nargs="?", help="多物種模型 JSON")
    p.add_argument("--tree", type=Path, required=True)
    p.add_argument("--traits", type=Path, help="性狀 CSV（取代模型係數）")
    p.add_argument("--components", type=int, default=0, help="使用前幾個主成分（0 表示全部）")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("export", help="輸出 OBJ")
    p.add_argument("--template", type=Path, required=True)
    p.add_argument("--model", type=Path)
    p.add_argument("--mode", choices=("mean", "pca", "posed"), default="mean")
    p.add_argument("--component", type=int, default=0)
    p.add_argument("--std", type=float, default=1.5)
    p.add_argument("--params", type=Path, help="--mode posed 使用的參數檔")
    p.add_argument("--out", type=Path, required=True)
    return parser


CONFIG_FLAGS = ("seed", "threads", "n_basis", "aves_rank", "normalize", "aves_source")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "analyze" and not args.model and not args.traits:
        parser.error("analyze 需要模型或 --traits")
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        overrides = {k: getattr(args, k, None) for k in CONFIG_FLAGS}
        config = load_config(args.config, **overrides)
        torch.set_num_threads(config.threads)
        return COMMANDS[args.command](args, config)
    except ShapeError as e:
        code, message = e.code, str(e)
    except OSError as e:
        code, message = "io", str(e)
    except ValueError as e:
        code, message = "value", str(e)
    print(f"error code={code} message={' '.join(message.split())}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
