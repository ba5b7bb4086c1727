"""proxyform: multimodal-proxy-guided enhancement of point-cloud submanifolds."""

from .cluster import (ClusterSet, DropConfig, GridSpec, ball_query,
                      build_clusters, drop_clusters, fps, fps_from, grid_prior,
                      keep_count, knn, recluster, uniform_prior)
from .geom import (apply_linear, compose, point_cloud, rot_z, scale, shear_xy,
                   translate, vec3)
from .numerics import (LinearParams, attention, avg_pool_rows, grad_check,
                       linear, matmul, max_pool_rows, relu, softmax_rows)
from .offsetnet import (OffsetNetParams, apply_offsets, clamp_offsets,
                        offset_features, offsetnet_forward, offsetnet_init)
from .pipeline import (PipelineConfig, ProxyTokens, RunReport, SceneSpec,
                       StageError, enhance, flops_report, gen_scene,
                       init_params, overhead_sweep, synth_proxies)
from .proxy import (FlopsReport, HeadParams, ProxyBiasParams, ProxyBlockParams,
                    attention_pool, flops_count, param_count, pointnet_lite,
                    pool_views, proxy_attention, proxy_bias, proxy_block,
                    stack_forward, transform_head, translation_head)
from .reshape import TransformSet, apply_all, apply_submanifold, identity_transforms

__version__ = "0.1.0"
