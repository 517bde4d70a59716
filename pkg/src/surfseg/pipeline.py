"""End-to-end segmentation loop.

Each step performs, in order:

1. node frames, region update (incremental band refresh, or a full
   rebuild after a topology change), region coefficients, and curve
   deletions (immediate, no sub-stepping);
2. one semi-implicit evolution step and node advancement;
3. topology detection; when a pair event fires, the step is rolled
   back and re-run as ``n_sub`` substeps, executing at each substep the
   first event that fires there (a warning is logged and the full step
   kept if none ever does);
4. one refinement/coarsening pass per curve.

The pipeline logs one CSV row per step, appends executed events to a
JSONL log, and writes curve/region/image snapshots on demand. Identical
inputs and configuration reproduce outputs byte for byte.
"""

import json
import os

import numpy as np

from .config import RunConfig
from .curves import compute_frames, refine_coarsen, validate_assumptions
from .errors import RegionDriftError, SurfSegError
from .evolution import (advance, compute_energy, evolve_step, forcing_values)
from .mesh import FaceImage, save_mesh
from .regions import compute_coefficients, initialize_regions, update_regions
from .topology import detect_events, execute_event, find_deletions

__all__ = ["SegmentationPipeline"]

# a handful of well-separated colors for region snapshots
_PALETTE = np.array([
    [0.90, 0.10, 0.10], [0.10, 0.45, 0.90], [0.95, 0.75, 0.10],
    [0.10, 0.70, 0.30], [0.60, 0.25, 0.80], [0.95, 0.50, 0.15],
    [0.15, 0.75, 0.75], [0.85, 0.30, 0.55],
])

# steps during which the event inverting a fresh surgery is ignored;
# right after a cut or a join the involved strands are still within the
# detection gate, and without this grace window the detector would read
# them as the opposite event and undo the surgery every other step
_EVENT_COOLDOWN = 4


class SegmentationPipeline:
    """Drives a curve network over a mesh image to a segmentation.

    Parameters
    ----------
    mesh, image, network
        The static surface, the face image, and the initial curves
        (already snapped to the surface).
    config : RunConfig
        Fully resolved configuration (see :meth:`RunConfig.resolve`).
    out_dir : str, optional
        Directory for logs and snapshots; nothing is written when None.
    save_every : int
        Also snapshot curves every this many steps (0: final only).
    """

    def __init__(self, mesh, image, network, config: RunConfig,
                 out_dir=None, save_every: int = 0):
        self.mesh = mesh
        self.image = image
        self.network = network
        self.config = config
        self.out_dir = out_dir
        self.save_every = int(save_every)

        self.step_index = 0
        self.region_map = None
        self.coeffs = None
        self.needs_reinit = True
        self.last_moved = None
        self.energy = None
        self.events_executed = 0
        self.warnings = []
        self.finished = False
        self.stop_reason = None

        self._csv_rows = []
        self._event_log = []
        self._cooldowns = {}
        self._last_event_step = None
        self._prev_network = None
        self._prev_regions = None
        self._prev_coeffs = None
        self._prev_energy = None
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)

    # ------------------------------------------------------------------

    def _frames(self):
        return {c.id: compute_frames(c, self.mesh) for c in self.network.curves}

    def _has_forcing(self) -> bool:
        return any(l != 0 for l in self.config.lam) or self.config.mu != 0

    def _refresh_regions(self, frames):
        cfg = self.config
        if self.region_map is None or self.needs_reinit:
            self.region_map = initialize_regions(
                self.mesh, self.image, self.network, frames, n0=cfg.n0)
            self.needs_reinit = False
        else:
            try:
                update_regions(self.region_map, self.mesh, self.image,
                               self.network, frames, n0=cfg.n0,
                               max_displacement=self.last_moved)
            except RegionDriftError:
                # nodes outran the band guarantee; fall back to a rebuild
                self.warnings.append(
                    f"step {self.step_index}: node drift exceeded the "
                    "incremental band, regions rebuilt from scratch")
                self.region_map = initialize_regions(
                    self.mesh, self.image, self.network, frames, n0=cfg.n0)
        self.coeffs = compute_coefficients(
            self.region_map, self.image, color_space=cfg.color_space,
            mesh=self.mesh)

    def _apply_region_merges(self, record):
        for dead, survivor in record.region_merges:
            if dead == -1:
                # lone curve: the smaller enclosed region disappears
                note = record.notes[-1]
                a, b = (int(x) for x in note.split()[-1].split("|"))
                areas = self.region_map.areas
                dead, survivor = (a, b) if areas.get(a, 0.0) <= areas.get(b, 0.0) \
                    else (b, a)
            self.region_map.merge_region(dead, survivor, self.mesh, self.image)

    def _log_event(self, event, record):
        entry = event.to_json_dict()
        entry["executed"] = not record.skipped
        if record.notes:
            entry["notes"] = record.notes
        self._event_log.append(entry)
        if not record.skipped:
            self.events_executed += 1
            self._last_event_step = self.step_index

    def _note_cooldowns(self, record):
        """Arm the grace window that keeps a fresh surgery from being
        undone by its inverse event (see _EVENT_COOLDOWN)."""
        if record.skipped:
            return
        expiry = self.step_index + _EVENT_COOLDOWN
        pieces = record.created_curves + record.modified_curves
        if record.kind == "split" and len(pieces) == 2:
            a, b = sorted(pieces)
            self._cooldowns[("merge", a, b)] = expiry
        elif record.kind == "merge":
            for cid in pieces:
                self._cooldowns[("split", cid)] = expiry
        elif record.kind == "create_junctions":
            for cid in pieces:
                self._cooldowns[("any", cid)] = expiry
        if len(self._cooldowns) > 64:
            self._cooldowns = {k: v for k, v in self._cooldowns.items()
                               if v > self.step_index}

    def _suppressed(self, ev) -> bool:
        step = self.step_index
        live = lambda key: self._cooldowns.get(key, -1) > step
        ids = [ev.curve_a] + ([ev.curve_b] if ev.curve_b >= 0 else [])
        if any(live(("any", cid)) for cid in ids):
            return True
        if ev.kind == "merge" and live(("merge",) + tuple(sorted(ids))):
            return True
        if ev.kind == "split" and live(("split", ev.curve_a)):
            return True
        return False

    def _filter_events(self, events):
        return [ev for ev in events if not self._suppressed(ev)]

    def _run_deletions(self):
        cfg = self.config
        deletions = find_deletions(self.network, cfg.delete_tol)
        for ev in deletions:
            ev.step = self.step_index
            rec = execute_event(self.network, self.mesh, ev)
            if self.region_map is not None:
                self._apply_region_merges(rec)
            else:
                self.needs_reinit = True
            self._log_event(ev, rec)
        if deletions and self.region_map is not None:
            self.coeffs = compute_coefficients(
                self.region_map, self.image, color_space=cfg.color_space,
                mesh=self.mesh)
        return bool(deletions)

    def _evolve_once(self, network, frames, tau):
        cfg = self.config
        forcing = None
        if self._has_forcing():
            forcing = forcing_values(network, self.image, self.coeffs,
                                     cfg.lam, mu=cfg.mu,
                                     color_space=cfg.color_space,
                                     mesh=self.mesh)
        result = evolve_step(network, frames, tau=tau, sigma=cfg.sigma,
                             forcing=forcing, solver=cfg.solver, tol=cfg.tol)
        moved = advance(network, self.mesh, result.deltas)
        return result, moved

    # ------------------------------------------------------------------

    def step(self) -> bool:
        """Run one full step; returns False once the network is empty."""
        if self.finished:
            return False
        m = self.step_index
        cfg = self.config
        try:
            # deletions run before any frames: a curve that collapsed at
            # the tail of the previous step must not reach a solve
            if self._run_deletions() and not self.network.curves:
                self.energy = compute_energy(
                    self.mesh, self.image, self.region_map, self.coeffs,
                    self.network, cfg.sigma, cfg.lam, mu=cfg.mu,
                    color_space=cfg.color_space)
                self._log_row(None, 0.0)
                self.finished = True
                self.step_index += 1
                return False
            frames = self._frames()
            self._refresh_regions(frames)
            self.energy = compute_energy(
                self.mesh, self.image, self.region_map, self.coeffs,
                self.network, cfg.sigma, cfg.lam, mu=cfg.mu,
                color_space=cfg.color_space)
            if self._should_stop_on_rise():
                self._revert_to_previous()
                return False

            snapshot = self.network.copy()
            self._prev_network = snapshot
            self._prev_regions = self.region_map.copy()
            self._prev_coeffs = self.coeffs
            self._prev_energy = self.energy
            result, moved = self._evolve_once(self.network, frames, cfg.dt)
            events, _ = detect_events(self.network, cfg.grid_a, cfg.delta0,
                                      bbox_min=self.mesh.bbox_min)
            events = self._filter_events(events)
            if events:
                sub = self._rerun_substeps(snapshot)
                if sub is not None:
                    result, moved = sub

            self.last_moved = moved
            for c in self.network.curves:
                refine_coarsen(c, self.mesh, cfg.l_min, cfg.l_max)
            self._log_row(result, moved)
        except SurfSegError as exc:
            raise type(exc)(f"step {m}: {exc}") from exc
        self.step_index += 1
        if not self.network.curves:
            self.finished = True
        return not self.finished

    def _should_stop_on_rise(self) -> bool:
        """True when convergence stopping is on, the energy rose, and no
        topology event touched the state between the two measurements."""
        if not self.config.stop_on_energy_rise or self._prev_energy is None:
            return False
        if self._last_event_step is not None and \
                self._last_event_step >= self.step_index - 1:
            return False
        return self.energy > self._prev_energy

    def _revert_to_previous(self):
        """Restore the last strictly-descending state and finish."""
        self.network = self._prev_network
        self.region_map = self._prev_regions
        self.coeffs = self._prev_coeffs
        self.energy = self._prev_energy
        self.needs_reinit = False
        self.finished = True
        self.stop_reason = (
            f"energy stopped decreasing at step {self.step_index}; "
            "reverted to the previous state")

    def _rerun_substeps(self, snapshot):
        """Re-integrate the step as substeps, executing at each substep
        the first event that fires there.

        Detection keeps running after a surgery: several pinches can
        mature within one step interval, and skipping detection for the
        remaining substeps would let the later pinches cross and leave
        the region partition inconsistent. The cooldown table keeps a
        fresh surgery from being undone by its own inverse event.
        Deletions run at the top of every substep so that a piece shed
        by a surgery is removed as soon as it shrinks below tolerance,
        before its collapse can degenerate a solve.

        Returns the (result, moved) of the substepped trajectory when
        at least one surgery was executed (the pipeline then switches
        to it), or None when no event re-fired, in which case the
        already-computed full step stands and a warning is recorded.
        """
        cfg = self.config
        net = snapshot.copy()
        executed = False
        total_moved = 0.0
        last_result = None
        for s in range(cfg.n_sub):
            for ev in find_deletions(net, cfg.delete_tol):
                ev.step = self.step_index
                ev.substep = s
                rec = execute_event(net, self.mesh, ev)
                self._log_event(ev, rec)
                executed = True
                self.needs_reinit = True
            if not net.curves:
                break
            frames = {c.id: compute_frames(c, self.mesh) for c in net.curves}
            last_result, moved = self._evolve_once(net, frames, cfg.dt / cfg.n_sub)
            total_moved += moved
            events, _ = detect_events(net, cfg.grid_a, cfg.delta0,
                                      bbox_min=self.mesh.bbox_min)
            events = self._filter_events(events)
            if events:
                ev = events[0]
                ev.step = self.step_index
                ev.substep = s
                rec = execute_event(net, self.mesh, ev)
                self._log_event(ev, rec)
                self._note_cooldowns(rec)
                if not rec.skipped:
                    executed = True
                    self.needs_reinit = True
            if not net.curves:
                break
        if executed:
            self.network = net
            return last_result, total_moved
        self.warnings.append(
            f"step {self.step_index}: detected event did not re-fire during "
            f"{cfg.n_sub} substeps; full step kept")
        return None

    def run(self, callback=None) -> int:
        """Run the configured number of steps (stops early when all
        curves are gone). Returns the number of steps taken."""
        taken = 0
        for _ in range(self.config.steps):
            alive = self.step()
            taken += 1
            if callback is not None:
                callback(self)
            if not alive:
                break
        if self.out_dir is not None:
            self.write_outputs()
        return taken

    # ------------------------------------------------------------------
    # logging and outputs

    def _log_row(self, result, moved):
        nodes = sum(c.num_nodes for c in self.network.curves)
        row = {
            "step": self.step_index,
            "curves": len(self.network.curves),
            "nodes": nodes,
            "length": repr(float(self.network.total_length())),
            "energy": repr(float(self.energy)) if self.energy is not None else "",
            "residual": repr(float(result.residual)) if result else "",
            "max_delta": repr(float(result.max_delta)) if result else "",
            "moved": repr(float(moved)),
            "events": self.events_executed,
        }
        self._csv_rows.append(row)
        if self.out_dir is not None and self.save_every > 0 \
                and self.step_index % self.save_every == 0:
            self.network.save_json(os.path.join(
                self.out_dir, f"curves_{self.step_index}.json"))

    def write_outputs(self):
        """Write final curves, logs, region map and piecewise-constant
        image snapshot to the output directory."""
        out = self.out_dir
        if out is None:
            return
        step = self.step_index
        self.network.save_json(os.path.join(out, f"curves_{step}.json"))

        import csv
        with open(os.path.join(out, "log.csv"), "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=[
                "step", "curves", "nodes", "length", "energy", "residual",
                "max_delta", "moved", "events"])
            writer.writeheader()
            writer.writerows(self._csv_rows)

        with open(os.path.join(out, "events.jsonl"), "w") as fh:
            for entry in self._event_log:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")

        if self.region_map is not None:
            labels = self.region_map.labels
            with open(os.path.join(out, "regions_final.txt"), "w") as fh:
                for lab in labels:
                    fh.write(f"{int(lab)}\n")
            colors = _PALETTE[np.asarray(labels) % len(_PALETTE)]
            save_mesh(os.path.join(out, "regions_final.ply"), self.mesh,
                      FaceImage(colors))
            save_mesh(os.path.join(out, f"piecewise_const_{step}.ply"),
                      self.mesh, self.piecewise_constant_image())

    def piecewise_constant_image(self) -> FaceImage:
        """The segmentation as an image: every face painted with its
        region's coefficient."""
        rm, co = self.region_map, self.coeffs
        channels = self.image.channels
        vals = np.zeros((self.mesh.num_faces, channels))
        for k in rm.region_ids():
            mask = rm.labels == k
            if self.config.color_space == "cb":
                vals[mask] = co.chroma[k] * co.brightness[k]
            else:
                vals[mask] = co.means[k]
        return FaceImage(np.clip(vals, 0.0, 1.0))

    def validate_state(self):
        """Debug hook: assert the module invariants of the current state."""
        frames = self._frames()
        report = validate_assumptions(self.network, frames)
        report.raise_if_failed()
        labels = self.region_map.labels if self.region_map is not None else None
        if labels is not None and np.any(labels < 0):
            raise SurfSegError("region partition has unlabeled faces")
        return report
