"""Named hyperparameter presets.

The benchmark presets carry the published table of best settings per
dataset (iter / d_code / ntk_width / batch / lr / eps / architecture).
Rows recorded there with a convolutional feature network are mapped onto
fc_2l with the same widths, since only fully-connected feature maps are
supported here. The desk_* presets are small configurations sized to run
a full pipeline in minutes on a laptop.
"""

from __future__ import annotations

__all__ = ["BENCHMARK_PRESETS", "DESK_PRESETS", "get_preset", "preset_names"]

# columns: iter, d_code, ntk_width, batch, lr, eps (options), architecture
BENCHMARK_PRESETS = {
    "dmnist":    {"iter": 2000,  "d_code": 5,   "ntk_width": "800",      "batch": 5000, "lr": 0.01, "eps": (10, 1, 0.2), "architecture": "fc_1l"},
    "fmnist":    {"iter": 2000,  "d_code": 5,   "ntk_width": "800",      "batch": 5000, "lr": 0.01, "eps": (10, 1, 0.2), "architecture": "fc_1l"},
    "celeba":    {"iter": 20000, "d_code": 141, "ntk_width": "3000_200", "batch": 1000, "lr": 0.01, "eps": (10,),        "architecture": "fc_2l"},
    "cifar10":   {"iter": 40000, "d_code": 201, "ntk_width": "3000_200", "batch": 1000, "lr": 0.01, "eps": (10, 1),      "architecture": "fc_2l"},
    "cifar10_nonprivate":
                 {"iter": 20000, "d_code": 31,  "ntk_width": "800_1000", "batch": 200,  "lr": 0.01, "eps": (None,),      "architecture": "fc_2l"},
    "adult":     {"iter": 50,    "d_code": 11,  "ntk_width": "30_200",   "batch": 200,  "lr": 0.01, "eps": (1,),         "architecture": "fc_2l"},
    "census":    {"iter": 2000,  "d_code": 21,  "ntk_width": "30_20",    "batch": 200,  "lr": 0.01, "eps": (1,),         "architecture": "fc_2l"},
    "cervical":  {"iter": 500,   "d_code": 11,  "ntk_width": "800_1000", "batch": 200,  "lr": 0.01, "eps": (1,),         "architecture": "fc_2l"},
    "credit":    {"iter": 500,   "d_code": 11,  "ntk_width": "1500",     "batch": 200,  "lr": 0.01, "eps": (1,),         "architecture": "fc_1l"},
    "epileptic": {"iter": 2000,  "d_code": 101, "ntk_width": "50_20",    "batch": 200,  "lr": 0.01, "eps": (1,),         "architecture": "fc_2l"},
    "isolet":    {"iter": 1000,  "d_code": 21,  "ntk_width": "10_20",    "batch": 200,  "lr": 0.01, "eps": (1,),         "architecture": "fc_2l"},
    "covtype":   {"iter": 1000,  "d_code": 101, "ntk_width": "100_20",   "batch": 200,  "lr": 0.01, "eps": (1,),         "architecture": "fc_2l"},
    "intrusion": {"iter": 1000,  "d_code": 21,  "ntk_width": "30_1000",  "batch": 200,  "lr": 0.01, "eps": (1,),         "architecture": "fc_2l"},
}

DESK_PRESETS = {
    # 8x8 digit images, feature width 200 (the width-insensitive regime);
    # tanh features hold up much better than relu once release noise kicks in
    "desk_digits": {
        "iter": 450, "d_code": 16, "ntk_width": "200", "batch": 120, "lr": 0.01,
        "eps": (1, None), "architecture": "fc_1l", "data_format": "images",
        "activation": "tanh", "train_fraction": 0.9, "gen_hidden": "200_200",
        "gen_norm": False, "n_synth": 3000, "eval_seeds": 1, "classifier_iters": 350,
    },
    # small heterogeneous two-class table
    "desk_tabular": {
        "iter": 400, "d_code": 8, "ntk_width": "50", "batch": 100, "lr": 0.01,
        "eps": (1, None), "architecture": "fc_1l", "data_format": "csv",
        "train_fraction": 0.8, "gen_hidden": "100_100_100", "gen_norm": False,
        "n_synth": 4000, "eval_seeds": 1, "classifier_iters": 300,
    },
}


def preset_names() -> list[str]:
    return sorted(BENCHMARK_PRESETS) + sorted(DESK_PRESETS)


def get_preset(name: str, eps: float | None | str = "default") -> dict:
    """Preset as RunConfig-style keys; eps picks one of the row's options."""
    table = BENCHMARK_PRESETS.get(name) or DESK_PRESETS.get(name)
    if table is None:
        raise KeyError(f"unknown preset {name!r}; known: {preset_names()}")
    out = dict(table)
    options = out.pop("eps")
    if eps == "default":
        out["eps"] = options[0]
    else:
        out["eps"] = eps
    out["n_iter"] = out.pop("iter")
    return out
