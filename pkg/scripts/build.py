#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
build.py - 單一物種形狀模型建立整合腳本

此腳本整合了完整的處理流程，依序執行：
1. 產生合成資料集（或使用既有的 manifest.json）
2. 模板對齊
3. 學習物種平均形狀
4. 學習個體基底並重新學習 PCA

作為一站式解決方案，這個腳本可以從規格檔建立一個物種的 SpeciesModel。
"""

import argparse
import json
import time
from pathlib import Path
from typing import List, Optional

from scripts import cli
from scripts.build_synth import SyntheticSpeciesSpec
from scripts.config import DATA_DIR
from scripts.io_files import write_json


def print_section_header(title):
    """印出區段標題"""
    line = "=" * 60
    print("\n" + line)
    print(f"  {title}")
    print(line + "\n")


def _run(step: List[str], global_flags: List[str]) -> bool:
    return cli.main(global_flags + step) == 0


def main(spec_path: Optional[Path] = None, work_dir: Path = DATA_DIR / "synth",
         global_flags: Optional[List[str]] = None) -> bool:
    """主函數 - 執行完整的處理流程"""
    start_time = time.time()
    work_dir = Path(work_dir)
    flags = list(global_flags or [])
    dataset = work_dir / "dataset"
    align_dir = work_dir / "align"
    mean_model = work_dir / "models" / "mean.json"
    species_model = work_dir / "models" / "species.json"

    print_section_header("開始建立物種形狀模型")

    # 步驟 1: 產生合成資料集
    print_section_header("步驟 1/4: 產生合成資料集")
    if (dataset / "manifest.json").exists() and spec_path is None:
        print(f"使用既有資料集: {dataset}")
    else:
        if spec_path is None:
            spec_path = work_dir / "spec.json"
            write_json(spec_path, SyntheticSpeciesSpec().to_dict())
            print(f"未指定規格檔，使用預設規格: {spec_path}")
        if not _run(["synth", str(spec_path), "--out", str(dataset)], flags):
            print("錯誤: 產生合成資料失敗，處理中止")
            return False

    # 步驟 2: 模板對齊
    print_section_header("步驟 2/4: 模板對齊")
    if not _run(["align", str(dataset / "manifest.json"), "--out", str(align_dir)], flags):
        print("錯誤: 對齊失敗，處理中止")
        return False
    with open(align_dir / "align_report.json", "r", encoding="utf-8") as f:
        report = json.load(f)
    if report["n_failed"]:
        # 失敗的實例不參與後續學習
        print(f"警告: {report['n_failed']} 個實例對齊失敗，將從後續步驟排除")

    # 步驟 3: 物種平均形狀
    print_section_header("步驟 3/4: 學習物種平均形狀")
    if not _run(["mean", str(dataset / "manifest.json"), "--align", str(align_dir), "--out", str(mean_model)], flags):
        print("錯誤: 平均形狀學習失敗，處理中止")
        return False

    # 步驟 4: 個體基底
    print_section_header("步驟 4/4: 學習個體基底與 PCA")
    if not _run(["basis", str(dataset / "manifest.json"), "--align", str(align_dir), "--mean", str(mean_model),
                 "--out", str(species_model)], flags):
        print("錯誤: 個體基底學習失敗，處理中止")
        return False

    total_time = time.time() - start_time
    hours, remainder = divmod(total_time, 3600)
    minutes, seconds = divmod(remainder, 60)

    print_section_header("處理完成")
    print(f"總處理時間: {int(hours)}小時 {int(minutes)}分鐘 {int(seconds)}秒")
    print(f"物種模型已寫入: {species_model}")
    return True


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="合成 → 對齊 → 平均形狀 → 個體基底")
    parser.add_argument("--spec", type=Path, help="SyntheticSpeciesSpec JSON")
    parser.add_argument("--work-dir", type=Path, default=DATA_DIR / "synth")
    parser.add_argument("--config", type=Path)
    parser.add_argument("--threads", type=int)
    args = parser.parse_args()
    flags = []
    if args.config:
        flags += ["--config", str(args.config)]
    if args.threads:
        flags += ["--threads", str(args.threads)]
    raise SystemExit(0 if main(args.spec, args.work_dir, flags) else 1)
