from scaf.pca.model import PcaModel, explained_variance, fit, mean_adjust, project

__all__ = ["PcaModel", "explained_variance", "fit", "mean_adjust", "project"]
