"""End-to-end anticipation model: wires depth, interaction and dynamic
features through the causal frame graph to per-frame probabilities.

The non-differentiable part of a video (top-m selection, local depth
pooling, tracking, adjacency constants, causal dynamic pooling) is
precomputed by prepare_video; forward_video replays only the trainable
math on a fresh tape, so it is pure given parameter values.
"""

from dataclasses import dataclass, field

import numpy as np

from . import depth as depth_mod
from . import dynamics, interaction, nn, temporal
from .data import PredictionCurve, select_top_m


@dataclass
class ModelConfig:
    d_e: int = 32
    d_gd: int = 64
    d_int: int = 32
    d_dyn: int = 32
    g: int = 7
    m: int = 19
    k_occ: int = 5
    max_lookback: int | None = None
    heads: int = 1
    d_gat: int = 64

    def __post_init__(self):
        if self.d_gat % self.heads != 0:
            raise ValueError("d_gat must divide evenly across heads")

    @property
    def d_node(self):
        return self.d_gd + 2 * self.d_int + self.d_dyn


@dataclass
class AblationFlags:
    """Feature-channel toggles for the ablation harness.

    Disabled channels are zeroed at the point they would enter fusion or
    node embedding; parameters and their init stream are unchanged, so
    two variants with the same seed share every weight.
    """

    use_depth: bool = True
    use_spatial: bool = True
    use_recon: bool = True
    use_dynamics: bool = True


VARIANTS = {
    "full": AblationFlags(),
    "no-arec": AblationFlags(use_recon=False),
    "no-dem": AblationFlags(use_depth=False),
    "no-iem": AblationFlags(use_spatial=False, use_recon=False),
    "no-dym": AblationFlags(use_dynamics=False),
    "stfm-dym-only": AblationFlags(use_depth=False, use_spatial=False, use_recon=False),
    "stfm-iem-only": AblationFlags(use_depth=False, use_dynamics=False),
}


@dataclass
class VideoPrep:
    """Frozen per-video constants feeding the trainable forward pass."""

    video_id: str
    positive: bool
    accident_frame: int | None
    fps: float
    n_frames: int
    flat_depth: np.ndarray        # [N x H*W]
    pooled_dyn: np.ndarray        # [N x d_dyn_in]
    graphs: list = field(default_factory=list)  # SceneGraph or None per frame


class AnticipationModel:
    def __init__(self, dims, cfg, seed=0):
        self.dims = dims
        self.cfg = cfg
        self.scale = float(np.hypot(dims.image_h, dims.image_w))
        self.params = {}
        rng = np.random.default_rng(np.random.PCG64(seed))
        hw = dims.depth_rows * dims.depth_cols

        def p(name, shape, fan=None):
            if len(shape) == 1 and fan is None:
                value = np.zeros(shape)
            else:
                fan_in, fan_out = fan if fan else (shape[0], shape[1])
                value = nn.glorot(rng, shape, fan_in, fan_out)
            self.params[name] = nn.Param(name, value)
            return self.params[name]

        p("depth_proj.w", (hw, cfg.d_gd))
        p("depth_proj.b", (cfg.d_gd,))
        p("embed_obj.w", (dims.d1, cfg.d_e))
        p("embed_obj.b", (cfg.d_e,))
        p("embed_label.w", (dims.d2, cfg.d_e))
        p("embed_label.b", (cfg.d_e,))
        p("embed_depth.w", (cfg.g * cfg.g, cfg.d_e))
        p("embed_depth.b", (cfg.d_e,))
        p("gcn_spatial.w", (3 * cfg.d_e, cfg.d_int))
        p("gcn_recon.w", (3 * cfg.d_e, cfg.d_int))
        p("theta.w", (2 * dims.d1, 2))
        p("theta.b", (2,))
        p("dyn_proj.w", (dims.d_dyn_in, cfg.d_dyn))
        p("dyn_proj.b", (cfg.d_dyn,))
        d_head = cfg.d_gat // cfg.heads
        self.heads = []
        for h in range(cfg.heads):
            self.heads.append(nn.AttentionHead(
                p("gat.h%d.src" % h, (cfg.d_node, d_head)),
                p("gat.h%d.tgt" % h, (cfg.d_node, d_head)),
                p("gat.h%d.att" % h, (d_head,), fan=(d_head, 1)),
            ))
        p("out.w", (cfg.d_gat, 1))
        p("out.b", (1,))

        seg = np.ones(3 * cfg.d_e)
        seg[2 * cfg.d_e:] = 0.0
        self._depth_col_mask = seg  # zeroes the depth third of node embeddings

    def param_list(self):
        return list(self.params.values())

    def zero_grads(self):
        for p in self.params.values():
            p.zero_grad()

    @property
    def embed_params(self):
        return {"w_obj": self.params["embed_obj.w"], "b_obj": self.params["embed_obj.b"],
                "w_label": self.params["embed_label.w"], "b_label": self.params["embed_label.b"],
                "w_depth": self.params["embed_depth.w"], "b_depth": self.params["embed_depth.b"]}

    @property
    def interaction_params(self):
        return {"w_gcn_spatial": self.params["gcn_spatial.w"],
                "w_gcn_recon": self.params["gcn_recon.w"],
                "w_theta": self.params["theta.w"], "b_theta": self.params["theta.b"]}

    # ------------------------------------------------------------------
    # preprocessing

    def prepare_video(self, sample):
        cfg, dims = self.cfg, self.dims
        img = (dims.image_h, dims.image_w)
        tracker = interaction.Tracker(k_occ=cfg.k_occ)
        graphs = []
        flat_depth = np.zeros((sample.n_frames, dims.depth_rows * dims.depth_cols))
        dyn = np.zeros((sample.n_frames, dims.d_dyn_in))
        for i, frame in enumerate(sample.frames):
            flat_depth[i] = np.asarray(frame.depth_map, dtype=np.float64).reshape(-1)
            dyn[i] = frame.dyn_feature
            dets = select_top_m(frame.detections, cfg.m)
            boxes = [d.box for d in dets]
            valid = np.zeros(cfg.m, dtype=bool)
            valid[:len(dets)] = True
            depth_local, valid = depth_mod.local_depth_matrix(
                frame.depth_map, boxes, valid, img, cfg.g, cfg.m)
            kept = [d for j, d in enumerate(dets) if valid[j]]
            kept_depth = [depth_local[j] for j in range(len(dets)) if valid[j]]
            recs = interaction.reconstruct_occluded(tracker.step(kept, kept_depth))
            graphs.append(self._build_graph(kept, kept_depth, recs))
        pooled = dynamics.causal_pool(dyn)
        return VideoPrep(video_id=sample.id, positive=sample.positive,
                         accident_frame=sample.accident_frame, fps=sample.fps,
                         n_frames=sample.n_frames, flat_depth=flat_depth,
                         pooled_dyn=pooled, graphs=graphs)

    def _build_graph(self, dets, det_depth_rows, recs):
        cfg, dims = self.cfg, self.dims
        m = cfg.m
        k = len(dets)
        if k == 0 and not recs:
            return None
        obj = np.zeros((m, dims.d1))
        label = np.zeros((m, dims.d2))
        dloc = np.zeros((m, cfg.g * cfg.g))
        centers = np.zeros((m, 2))
        valid = np.zeros(m, dtype=bool)
        rec_mask = np.zeros(m, dtype=bool)
        for j, det in enumerate(dets):
            obj[j] = det.obj_feature
            label[j] = det.label_feature
            dloc[j] = det_depth_rows[j]
            centers[j] = det.center()
            valid[j] = True
        recs = recs[:m - k]
        rec_slots, pred_centers, theta_in = [], [], []
        for r, rec in enumerate(recs):
            s = k + r
            obj[s] = rec["obj"]
            label[s] = rec["label"]
            dloc[s] = rec["depth"]
            centers[s] = rec["center"]
            rec_mask[s] = True
            rec_slots.append(s)
            pred_centers.append(rec["center"])
            theta_in.append(np.concatenate([rec["obj"], rec["obj"]]))
        if valid.any():
            a_mn = interaction.spatial_adjacency(centers, valid, self.scale)
        else:
            a_mn = np.zeros((m, m))
        occupied = valid | rec_mask
        rec_pairs = (interaction.build_rec_pairs(occupied, rec_mask)
                     if rec_mask.any() else np.zeros((0, 2), dtype=np.intp))
        return interaction.SceneGraph(
            nodes_obj=obj, nodes_label=label, nodes_depth=dloc, centers=centers,
            valid=valid, reconstructed=rec_mask, a_mn=a_mn,
            rec_pairs=rec_pairs,
            rec_slots=np.asarray(rec_slots, dtype=np.intp),
            rec_pred_centers=np.asarray(pred_centers, dtype=np.float64).reshape(-1, 2),
            rec_theta_in=np.asarray(theta_in, dtype=np.float64).reshape(-1, 2 * dims.d1))

    # ------------------------------------------------------------------
    # trainable forward

    def forward_video(self, tape, prep, flags=None):
        """Per-frame logits [N x 1] for one prepared video."""
        flags = flags or AblationFlags()
        cfg = self.cfg
        n = prep.n_frames

        if flags.use_depth:
            dep_all = nn.relu(tape, nn.linear_forward(
                tape, nn.Tensor(prep.flat_depth),
                self.params["depth_proj.w"], self.params["depth_proj.b"]))
        else:
            dep_all = nn.Tensor(np.zeros((n, cfg.d_gd)))
        if flags.use_dynamics:
            dyn_all = dynamics.project_dynamic(tape, prep.pooled_dyn,
                                               self.params["dyn_proj.w"],
                                               self.params["dyn_proj.b"])
        else:
            dyn_all = nn.Tensor(np.zeros((n, cfg.d_dyn)))

        fused = []
        widths = (cfg.d_gd, 2 * cfg.d_int, cfg.d_dyn)
        for i in range(n):
            f_dep = nn.row(tape, dep_all, i)
            f_int = self._frame_interaction(tape, prep.graphs[i], flags)
            f_dyn = nn.row(tape, dyn_all, i)
            fused.append(temporal.fuse_node(tape, f_dep, f_int, f_dyn, widths))
        graph = temporal.FrameGraph(
            node_features=nn.stack_rows(tape, fused),
            a_tem=temporal.temporal_adjacency(n, cfg.max_lookback))
        return temporal.predict_logits(tape, graph, self.heads,
                                       self.params["out.w"], self.params["out.b"])

    def _frame_interaction(self, tape, graph, flags):
        cfg = self.cfg
        zeros = lambda w: nn.Tensor(np.zeros(w))
        if graph is None or not graph.valid.any():
            # nothing detected this frame: interaction channel is silent
            return zeros(2 * cfg.d_int)
        nodes = interaction.embed_nodes(tape, graph.nodes_obj, graph.nodes_label,
                                        graph.nodes_depth, graph.occupied,
                                        self.embed_params)
        if not flags.use_depth:
            nodes = nn.mul_const(tape, nodes, self._depth_col_mask)
        if flags.use_spatial:
            conv = nn.graph_conv(tape, nodes, graph.a_mn,
                                 self.params["gcn_spatial.w"], graph.valid)
            f_int = nn.masked_mean_rows(tape, conv, graph.valid)
        else:
            f_int = zeros(cfg.d_int)
        f_rec = zeros(cfg.d_int)
        if flags.use_recon and graph.rec_slots.size:
            a_rec = interaction.reconstruction_adjacency(
                tape, graph, self.params["theta.w"], self.params["theta.b"], self.scale)
            conv_rec = nn.graph_conv(tape, nodes, a_rec,
                                     self.params["gcn_recon.w"], graph.occupied)
            f_rec = nn.masked_mean_rows(tape, conv_rec, graph.occupied)
        return nn.relu(tape, nn.concat(tape, [f_int, f_rec]))

    # ------------------------------------------------------------------
    # inference

    def predict(self, sample, flags=None):
        prep = self.prepare_video(sample)
        return self.predict_prepared(prep, flags)

    def predict_prepared(self, prep, flags=None):
        tape = nn.ComputationTape()
        logits = self.forward_video(tape, prep, flags)
        return PredictionCurve(video_id=prep.video_id,
                               probs=temporal.logits_to_probs(logits.value),
                               positive=prep.positive,
                               accident_frame=prep.accident_frame,
                               fps=prep.fps)
