"""Online prediction pipeline: classify intent, select the matching cost
function, score candidate trajectories, and correct the classifier with the
probability estimate.

Per frame: the sequence classifier's majority vote picks which cost weights
apply, the polynomial generator proposes candidates from the latest state,
the softmax over negative costs yields candidate probabilities, and the
summed Change-candidate probability both reports the lane-change probability
and overrides the classifier label at the 0.5 threshold.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .core.types import ManeuverLabel, Trajectory, VehicleState
from .errors import DomainError, WarmUp
from .features import FeatureScaler, SceneContext
from .intent import SeqModel, forward as intent_forward, window_values
from .irl import CostWeights, candidate_probabilities, lane_change_probability
from .trajgen import GeneratorConfig, generate

MODEL_PERSONALIZED = "Personalized"
MODEL_GENERAL = "General"


@dataclass(frozen=True)
class DriverModel:
    """Per-driver payload: cost weights for both maneuvers, the intent net,
    and the feature scaling the weights were trained under."""

    driver_id: str
    theta_change: CostWeights
    theta_keep: CostWeights
    intent: SeqModel
    feature_scaling: FeatureScaler
    created_at: str = "1970-01-01T00:00:00Z"
    trip_count: int = 0

    def to_dict(self):
        return {
            "driver_id": self.driver_id,
            "theta_change": list(self.theta_change.theta),
            "theta_keep": list(self.theta_keep.theta),
            "intent": self.intent.to_dict(),
            "feature_scaling": self.feature_scaling.to_dict(),
            "created_at": self.created_at,
            "trip_count": self.trip_count,
        }

    @staticmethod
    def from_dict(doc):
        try:
            return DriverModel(
                driver_id=doc["driver_id"],
                theta_change=CostWeights(tuple(doc["theta_change"]), ManeuverLabel.CHANGE),
                theta_keep=CostWeights(tuple(doc["theta_keep"]), ManeuverLabel.KEEP),
                intent=SeqModel.from_dict(doc["intent"]),
                feature_scaling=FeatureScaler.from_dict(doc["feature_scaling"]),
                created_at=doc.get("created_at", "1970-01-01T00:00:00Z"),
                trip_count=int(doc.get("trip_count", 0)),
            )
        except KeyError as exc:
            raise DomainError(f"driver model document missing field {exc}") from exc

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @staticmethod
    def load(path):
        with open(path, encoding="utf-8") as fh:
            return DriverModel.from_dict(json.load(fh))


@dataclass(frozen=True)
class PredictorConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    correction_threshold: float = 0.5
    model_source: str = MODEL_PERSONALIZED


@dataclass(frozen=True)
class PredictionFrame:
    t: float
    p_change: float
    maneuver: ManeuverLabel  # corrected label
    best_trajectory: Trajectory
    candidate_probs: tuple
    candidate_labels: tuple
    classifier_labels: tuple
    model_source: str

    def to_dict(self):
        return {
            "t": self.t,
            "p_change": self.p_change,
            "maneuver": self.maneuver.value,
            "model_source": self.model_source,
            "candidate_probs": list(self.candidate_probs),
            "candidate_labels": [l.value for l in self.candidate_labels],
            "classifier_labels": [l.value for l in self.classifier_labels],
            "best_trajectory": {
                "dt": self.best_trajectory.dt,
                "states": [list(s.as_tuple()) for s in self.best_trajectory.states],
            },
        }

    @staticmethod
    def from_dict(doc):
        bt = doc["best_trajectory"]
        states = tuple(VehicleState(*row) for row in bt["states"])
        return PredictionFrame(
            t=float(doc["t"]),
            p_change=float(doc["p_change"]),
            maneuver=ManeuverLabel(doc["maneuver"]),
            best_trajectory=Trajectory(states, float(bt["dt"])),
            candidate_probs=tuple(float(p) for p in doc["candidate_probs"]),
            candidate_labels=tuple(ManeuverLabel(l) for l in doc["candidate_labels"]),
            classifier_labels=tuple(ManeuverLabel(l) for l in doc["classifier_labels"]),
            model_source=doc["model_source"],
        )


def project_context(ctx, n_steps, dt):
    """Constant-velocity extrapolation of the scene over the horizon."""
    out = []
    for k in range(n_steps):
        def shift(veh):
            if veh is None:
                return None
            return VehicleState(
                t=veh.t + k * dt, x=veh.x + veh.v_lon * k * dt, y=veh.y,
                v_lon=veh.v_lon, v_lat=0.0, a_lon=0.0, yaw=0.0, yaw_rate=0.0,
                d_remain=veh.d_remain,
            )
        out.append(SceneContext(leader=shift(ctx.leader), follower=shift(ctx.follower),
                                v_lim=ctx.v_lim))
    return out


def predict_step(model, history, ctx, net, cfg=None):
    """One prediction frame from the rolling state history.

    Raises WarmUp while the history is shorter than the classifier window.
    """
    cfg = cfg or PredictorConfig()
    t_in = model.intent.t_in
    if len(history) < t_in:
        raise WarmUp(f"need {t_in} samples, have {len(history)}")

    n = len(history)
    window = window_values(history, n - t_in, n)
    intent_out = intent_forward(model.intent, window)
    maneuver_guess = intent_out.majority
    theta = model.theta_change if maneuver_guess == ManeuverLabel.CHANGE else model.theta_keep

    latest = history[-1]
    cands = generate(latest, net, cfg.generator)
    n_steps = len(cands[0].traj)
    ctx_seq = project_context(ctx, n_steps, cfg.generator.dt)
    probs = candidate_probabilities(theta, cands, ctx_seq, net, scaler=model.feature_scaling)
    labels = [c.label for c in cands]
    p_change = lane_change_probability(probs, labels)

    corrected = (
        ManeuverLabel.CHANGE if p_change >= cfg.correction_threshold else ManeuverLabel.KEEP
    )
    # highest probability wins; exact ties prefer Keep, then the lowest index
    order = sorted(
        range(len(cands)),
        key=lambda i: (-probs[i], 0 if labels[i] == ManeuverLabel.KEEP else 1, i),
    )
    best = cands[order[0]]
    return PredictionFrame(
        t=latest.t,
        p_change=float(p_change),
        maneuver=corrected,
        best_trajectory=best.traj,
        candidate_probs=tuple(float(p) for p in probs),
        candidate_labels=tuple(labels),
        classifier_labels=intent_out.labels,
        model_source=cfg.model_source,
    )


HISTORY_LIMIT = 100  # rolling state-buffer bound


def run_trip(model, trip, ctx_stream, net, cfg=None):
    """Stream predict_step over a full trip; frames align with trip samples
    from the first index with enough history."""
    cfg = cfg or PredictorConfig()
    if len(ctx_stream) != len(trip):
        raise DomainError("context stream length mismatch")
    frames = []
    for i in range(len(trip)):
        lo = max(0, i + 1 - HISTORY_LIMIT)
        history = trip.window(lo, i + 1)
        try:
            frames.append(predict_step(model, history, ctx_stream[i], net, cfg))
        except WarmUp:
            continue
    return frames


def write_frames_jsonl(frames, path):
    with open(path, "w", encoding="utf-8") as fh:
        for fr in frames:
            fh.write(json.dumps(fr.to_dict()))
            fh.write("\n")


def read_frames_jsonl(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(PredictionFrame.from_dict(json.loads(line)))
    return out
