"""Cluster points at scale L*eps, then reduce and enhance a pairing graph with certificates.

Run: python demos/02_graph_rewrites.py
"""
import math

import numpy as np

from chaosbound.covariance import fractional_covariance, gram_matrix, mollified_covariance
from chaosbound.gaussian import rhs_moment
from chaosbound.graphs import (ClusterGraph, build_clusters, enhance_graph, omega_star_member,
                               reduce_graph)
from chaosbound.scaling import bump

eps, alpha, m = 0.125, 0.5, 1
model = mollified_covariance(fractional_covariance(alpha), bump(), eps)
print(f"mollified covariance: Lambda = {model.lam:.4f}")

# Two nearby points form a cluster; the other two points are isolated singletons.
points = eps * np.array([0.0, 0.3, 40.0, 120.0])
gv = gram_matrix(model, points)
cl = build_clusters(gv.points, 4, eps)
print("cluster labels", cl.labels, "singletons", cl.singletons, "clusters", cl.clusters)

# Singleton 2 carries too many legs, so the graph is not minimal.
g = ClusterGraph.from_edges(gv, [(2, 3, 3), (0, 2, 1), (0, 3, 1)])
print("degrees", g.degrees().tolist(), "minimal:", omega_star_member(g, cl, m))

red, rc = reduce_graph(g, cl, m, alpha)
enh, ec = enhance_graph(red, cl, m, alpha)
for c in rc + ec:
    print("  " + c.line())
C_total = math.prod(c.factor for c in rc + ec)
rhs = rhs_moment(gv, m)
print(f"final degrees {enh.degrees().tolist()}")
print(f"|G| = {g.value():.4e} <= C_total * rhs = {C_total:.3f} * {rhs:.4e} = {C_total * rhs:.4e}")
