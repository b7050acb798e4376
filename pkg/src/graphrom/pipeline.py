"""Glue for the full workflow: synthetic data, levels, model, training."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import aero
from .coarsening import PoolingLevel, RetentionProfile, build_level
from .dataset import Doe, FlowSample, SyntheticCase, generate_case, lhs_sample, split
from .gradients import gradient_magnitude_aggregate
from .mesh import Graph, SurfaceMesh, build_graph, node_areas, node_normals
from .model import ModelConfig, build_model
from .training import Scalers, TrainConfig, evaluate, fit
from .mwls import MwlsParams

__all__ = ["Dataset", "make_dataset", "build_levels", "default_reference", "train_and_evaluate"]


@dataclass
class Dataset:
    mesh: SurfaceMesh
    graph: Graph
    design: np.ndarray
    samples: list
    splits: dict

    def subset(self, name) -> list[FlowSample]:
        return [self.samples[i] for i in self.splits[name]]


def make_dataset(case: SyntheticCase, doe: Doe) -> Dataset:
    design = lhs_sample(doe)
    samples = []
    mesh = None
    for aoa, mach in design:
        mesh, s = generate_case(case, aoa, mach)
        samples.append(s)
    splits = split(doe.n_samples, counts=doe.counts, fractions=doe.fractions, seed=doe.seed)
    return Dataset(mesh, build_graph(mesh), design, samples, splits)


def build_levels(graph: Graph, coords, train_samples, ratios, profile: RetentionProfile | None = None,
                 seed=0, mwls_params: MwlsParams | None = None, k=5, prefilter=250,
                 areas=None, normals=None):
    """Two chained pooling levels driven by the training-split Cp gradients.

    The second level reuses the fine-mesh aggregate at the retained nodes.
    ``areas`` (lumped node areas) only feed the conservation diagnostic;
    ``normals`` restrict the gradients to the tangent plane.
    """
    coords = np.asarray(coords, dtype=np.float64)
    fields = [np.asarray(s.targets)[:, 0] for s in train_samples]
    if not fields:
        raise ValueError("no training samples to drive node selection")
    agg = gradient_magnitude_aggregate(fields, graph, coords, normals)
    lv1 = build_level(graph, coords, agg, ratios[0], profile, seed, mwls_params, k, prefilter,
                      node_weights=areas)
    # level-2 integral weights: adjoint of unpooling applied to the fine areas
    areas2 = None if areas is None else lv1.up.transpose_csr() @ np.asarray(areas, float)
    lv2 = build_level(lv1.coarse_graph, lv1.coarse_coords, agg[lv1.selected], ratios[1],
                      profile, seed + 1, mwls_params, k, prefilter, node_weights=areas2)
    return lv1, lv2


def default_reference(case: SyntheticCase, fraction=0.25) -> aero.AeroReference:
    """Mean chord, planform area, moment axis at ``fraction`` of the root chord."""
    from .dataset import build_mesh

    point = aero.moment_reference(build_mesh(case).nodes, fraction, case.root_chord)
    return aero.AeroReference(case.mean_chord, case.planform_area, tuple(point), 0.0)


def train_and_evaluate(data: Dataset, model_cfg: ModelConfig, train_cfg: TrainConfig,
                       ref: aero.AeroReference, profile=None, level_seed=0, model_seed=0,
                       levels: tuple[PoolingLevel, PoolingLevel] | None = None, mwls_params=None):
    train = data.subset("train")
    if levels is None:
        levels = build_levels(data.graph, data.mesh.nodes, train, model_cfg.ratios, profile,
                              level_seed, mwls_params, areas=node_areas(data.mesh),
                              normals=node_normals(data.mesh))
    scalers = Scalers.fit(data.mesh.nodes, train)
    model = build_model(model_cfg, data.graph, levels, seed=model_seed)
    hist = fit(model, data.mesh, train, data.subset("val"), scalers, ref, train_cfg)
    report = evaluate(model, data.mesh, data.subset("test"), scalers, ref)
    return model, scalers, levels, hist, report
