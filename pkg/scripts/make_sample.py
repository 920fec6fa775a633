"""Regenerate the bundled sample cohort (simulated; no real patient data).

    python3 scripts/make_sample.py [--out src/coximpute/data]

Draws 240 subjects from the scenario-3 generator (times in months,
administrative censoring at 84), adds an independent binary covariate and
removes 30% of the first covariate completely at random.
"""
import argparse
from pathlib import Path

import numpy as np

from coximpute import SurvivalDataset, seeding
from coximpute.io import ColumnSpec, save_csv, schema_to_json
from coximpute.simulation import ScenarioConfig, gen_dataset, induce_mcar
from coximpute.survival import ColumnKind

SEED = 20240417


def build():
    cfg = ScenarioConfig.scenario(3, n=240)
    sim = gen_dataset(cfg, SEED)
    amputated = induce_mcar(sim.data, 0.3, SEED)
    rng = seeding.generator(SEED, 99)
    sex = rng.integers(0, 2, size=cfg.n).astype(float)
    X = np.column_stack([np.round(amputated.predictors, 6), sex])
    mask = np.column_stack([amputated.missing_mask, np.zeros(cfg.n, bool)])
    names = ("age", "egfr", "hb", "lvef", "sex")
    kinds = (ColumnKind(),) * 4 + (ColumnKind("binary"),)
    time = np.round(amputated.time, 4)
    data = SurvivalDataset(time, amputated.status, X, mask, kinds, names)
    specs = [ColumnSpec("time", "time"), ColumnSpec("status", "status")]
    specs += [ColumnSpec(n, "continuous") for n in names[:4]] + [ColumnSpec("sex", "binary")]
    return data, specs


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "src" / "coximpute" / "data"))
    args = parser.parse_args()
    out = Path(args.out)
    data, specs = build()
    save_csv(out / "sample_cohort.csv", data, specs)
    (out / "sample_cohort.schema.json").write_text(schema_to_json(specs))
    # a few rows to predict for, one with a missing value
    rows = [0, 1, int(np.flatnonzero(data.row_has_missing)[0])]
    lines = [",".join(data.column_names)]
    for i in rows:
        cells = []
        for j, kind in enumerate(data.column_kinds):
            if data.missing_mask[i, j]:
                cells.append("NA")
            elif kind.kind == "binary":
                cells.append(str(int(data.predictors[i, j])))
            else:
                cells.append(repr(float(data.predictors[i, j])))
        lines.append(",".join(cells))
    (out / "sample_newdata.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {data.n} rows ({int(data.missing_mask.any(axis=1).sum())} incomplete) to {out}")


if __name__ == "__main__":
    main()
