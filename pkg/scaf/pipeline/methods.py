"""Constants and utilities related to attack method configuration."""

from typing import Any, Dict, List, Tuple

from scaf.data.models import Architecture, Method

# Define method configuration - single source of truth
METHOD_CONFIG: Dict[Method, Dict[str, Any]] = {
    Method.MLP: {
        "display_name": "MLP",
        "stages": ["split", "train", "evaluate"],
        "architecture": Architecture.MLP,
        "order": 0,
    },
    Method.PCA_MLP: {
        "display_name": "PCA-MLP",
        "stages": ["split", "pca", "train", "evaluate"],
        "architecture": Architecture.MLP,
        "order": 1,
    },
    Method.CNN: {
        "display_name": "CNN",
        "stages": ["split", "train", "evaluate"],
        "architecture": Architecture.CNN,
        "order": 2,
    },
    Method.DTW_CNN: {
        "display_name": "DTW-CNN",
        "stages": ["split", "align", "train", "evaluate"],
        "architecture": Architecture.CNN,
        "order": 3,
    },
    Method.DTW_PCA_CNN: {
        "display_name": "DTW-PCA-CNN",
        "stages": ["split", "align", "pca", "train", "evaluate"],
        "architecture": Architecture.CNN,
        "order": 4,
    },
    Method.DTW_PCA_MLP: {
        "display_name": "DTW-PCA-MLP",
        "stages": ["split", "align", "pca", "train", "evaluate"],
        "architecture": Architecture.MLP,
        "order": 5,
    },
}

METHOD_ORDER: List[Tuple[str, str]] = [
    (config["display_name"], method.value)
    for method, config in sorted(METHOD_CONFIG.items(), key=lambda item: item[1]["order"])
]


def get_method_stages(method: Method) -> List[str]:
    return list(METHOD_CONFIG[Method(method)]["stages"])


def get_architecture(method: Method) -> Architecture:
    return METHOD_CONFIG[Method(method)]["architecture"]


def uses_alignment(method: Method) -> bool:
    return "align" in get_method_stages(method)


def uses_pca(method: Method) -> bool:
    return "pca" in get_method_stages(method)
