"""HTTP submission endpoint with hidden ground truth and a leaderboard.

Clients are scripts: they POST the raw submission file as the request body
with a bearer token, poll the returned submission id, and read the
leaderboard. Parsing is validated synchronously (malformed files are rejected
with the offending line number); scoring happens asynchronously on a per-task
worker against server-held truth that no route ever exposes.

Each (team, task) may land at most 2 accepted submissions in any rolling
7-day window; a submission exactly one window old no longer counts. The
leaderboard orders classification and localization entries by ascending top-5
error; detection entries are ordered by categories won across the current
entries (ties credit everyone tied), then by mean AP.

Persistence is a single-writer append-only event log with periodic snapshots,
so a restarted server replays to the identical state and identical bytes
always re-score identically.
"""
from __future__ import annotations

import hashlib
import json
import os
import queue
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import classification, detection, localization
from .ingest import (
    CLASSIFICATION,
    DETECTION,
    LOCALIZATION,
    TASKS,
    FormatError,
    GroundTruthStore,
    load_ground_truth,
    parse_submission,
)

TOKEN_FILE_ENV = "VISBENCH_TOKEN_FILE"

DEFAULT_PAYLOAD_CAP = 256 * 2**20
DEFAULT_WINDOW_SECONDS = 7 * 24 * 3600.0


@dataclass(frozen=True)
class ServiceConfig:
    truth_dirs: dict[str, str]
    tokens_path: str
    storage_dir: str
    payload_cap_bytes: int = DEFAULT_PAYLOAD_CAP
    window_seconds: float = DEFAULT_WINDOW_SECONDS
    max_submissions_per_window: int = 2
    snapshot_every: int = 50
    eval_workers_per_task: int = 1

    @classmethod
    def from_file(cls, path: str | Path) -> "ServiceConfig":
        raw = json.loads(Path(path).read_text())
        tokens_path = os.environ.get(TOKEN_FILE_ENV, raw["tokens_path"])
        return cls(
            truth_dirs=dict(raw["truth_dirs"]),
            tokens_path=tokens_path,
            storage_dir=raw["storage_dir"],
            payload_cap_bytes=int(raw.get("payload_cap_bytes", DEFAULT_PAYLOAD_CAP)),
            window_seconds=float(raw.get("window_seconds", DEFAULT_WINDOW_SECONDS)),
            max_submissions_per_window=int(raw.get("max_submissions_per_window", 2)),
            snapshot_every=int(raw.get("snapshot_every", 50)),
            eval_workers_per_task=int(raw.get("eval_workers_per_task", 1)),
        )


def load_tokens(path: str | Path) -> dict[str, str]:
    """Token -> team map from a JSON {team: token} secret file."""
    raw = json.loads(Path(path).read_text())
    by_token: dict[str, str] = {}
    for team, token in raw.items():
        if token in by_token:
            raise ValueError(f"token shared by {by_token[token]!r} and {team!r}")
        by_token[token] = team
    return by_token


@dataclass
class SubmissionState:
    id: str
    team: str
    task: str
    submitted_at: float
    digest: str
    status: str = "queued"  # queued | running | completed | failed
    scores: dict | None = None
    error: str | None = None

    def public(self) -> dict:
        out = {
            "id": self.id,
            "team": self.team,
            "task": self.task,
            "submitted_at": self.submitted_at,
            "digest": self.digest,
            "status": self.status,
        }
        if self.scores is not None:
            out["scores"] = self.scores
        if self.error is not None:
            out["error"] = self.error
        return out


class SubmissionStore:
    """Append-only event log plus snapshots; the single writer for all state."""

    def __init__(self, storage_dir: str | Path, snapshot_every: int = 50) -> None:
        self.dir = Path(storage_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "payloads").mkdir(exist_ok=True)
        self.snapshot_every = snapshot_every
        self._lock = threading.RLock()
        self.records: dict[str, SubmissionState] = {}
        self.accepted_times: dict[tuple[str, str], list[float]] = {}
        self._event_count = 0
        self._load()

    # -- persistence ---------------------------------------------------------

    @property
    def _events_path(self) -> Path:
        return self.dir / "events.jsonl"

    @property
    def _snapshot_path(self) -> Path:
        return self.dir / "snapshot.json"

    def _load(self) -> None:
        start = 0
        if self._snapshot_path.exists():
            snap = json.loads(self._snapshot_path.read_text())
            start = snap["event_count"]
            self._event_count = start
            for rec in snap["records"]:
                state = SubmissionState(**rec)
                self.records[state.id] = state
            self.accepted_times = {
                (t, k): list(v) for (t, k), v in
                ((tuple(key.split("\x00", 1)), v) for key, v in snap["accepted"].items())
            }
        if self._events_path.exists():
            with self._events_path.open() as fh:
                for i, line in enumerate(fh):
                    if i < start or not line.strip():
                        continue
                    self._apply(json.loads(line))
                    self._event_count += 1

    def _apply(self, event: dict) -> None:
        kind = event["type"]
        if kind == "accepted":
            state = SubmissionState(
                id=event["id"],
                team=event["team"],
                task=event["task"],
                submitted_at=event["time"],
                digest=event["digest"],
            )
            self.records[state.id] = state
            self.accepted_times.setdefault((state.team, state.task), []).append(
                state.submitted_at
            )
        elif kind == "completed":
            rec = self.records[event["id"]]
            rec.status = "completed"
            rec.scores = event["scores"]
        elif kind == "failed":
            rec = self.records[event["id"]]
            rec.status = "failed"
            rec.error = event["error"]

    def _append(self, event: dict) -> None:
        with self._events_path.open("a") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
        self._apply(event)
        self._event_count += 1
        if self._event_count % self.snapshot_every == 0:
            self._write_snapshot()

    def _write_snapshot(self) -> None:
        snap = {
            "event_count": self._event_count,
            "records": [vars(r) for r in self.records.values()],
            "accepted": {
                "\x00".join(k): v for k, v in self.accepted_times.items()
            },
        }
        tmp = self._snapshot_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(snap, sort_keys=True))
        tmp.replace(self._snapshot_path)

    # -- operations ------------------------------------------------------------

    def within_rate_limit(
        self, team: str, task: str, now: float, window: float, limit: int
    ) -> bool:
        with self._lock:
            times = self.accepted_times.get((team, task), [])
            recent = [t for t in times if t > now - window]
            return len(recent) < limit

    def accept(self, team: str, task: str, now: float, payload: bytes) -> SubmissionState:
        with self._lock:
            digest = hashlib.sha256(payload).hexdigest()
            sid = f"{len(self.records) + 1:06d}-{digest[:12]}"
            (self.dir / "payloads" / f"{sid}.txt").write_bytes(payload)
            self._append(
                {
                    "type": "accepted",
                    "id": sid,
                    "team": team,
                    "task": task,
                    "time": now,
                    "digest": digest,
                }
            )
            return self.records[sid]

    def try_accept(
        self, team: str, task: str, now: float, payload: bytes,
        window: float, limit: int,
    ) -> SubmissionState | None:
        """Rate-limit check and acceptance under one lock; None when refused."""
        with self._lock:
            if not self.within_rate_limit(team, task, now, window, limit):
                return None
            return self.accept(team, task, now, payload)

    def payload(self, sid: str) -> bytes:
        return (self.dir / "payloads" / f"{sid}.txt").read_bytes()

    def complete(self, sid: str, scores: dict) -> None:
        with self._lock:
            self._append({"type": "completed", "id": sid, "scores": scores})

    def fail(self, sid: str, error: str) -> None:
        with self._lock:
            self._append({"type": "failed", "id": sid, "error": error})

    def get(self, sid: str) -> SubmissionState | None:
        with self._lock:
            return self.records.get(sid)

    def completed_for_task(self, task: str) -> list[SubmissionState]:
        with self._lock:
            return [
                r for r in self.records.values()
                if r.task == task and r.status == "completed"
            ]

    def set_running(self, sid: str) -> None:
        # transient, not persisted: a restart re-queues running jobs
        with self._lock:
            rec = self.records.get(sid)
            if rec and rec.status == "queued":
                rec.status = "running"


def score_submission(truth: GroundTruthStore, task: str, payload: bytes, team: str) -> dict:
    """Deterministic task-appropriate score summary for a leaderboard entry."""
    sub = parse_submission(payload, task, truth, team=team)
    if task == CLASSIFICATION:
        report = classification.evaluate_classification(truth, sub, ks=(1, 5))
        return {
            "top1_error": report.top_k_error[1],
            "top5_error": report.top_k_error[5],
            "evaluated_count": report.evaluated_count,
        }
    if task == LOCALIZATION:
        report = localization.localization_error(truth, sub)
        return {
            "top5_error": report.top5_error,
            "evaluated_count": report.evaluated_count,
        }
    report = detection.evaluate_detection(truth, sub, include_cache=False)
    return {
        "map": report.mean_ap,
        "ap_per_category": dict(sorted(report.ap_per_category.items())),
        "zero_truth_categories": sorted(report.zero_truth_categories),
    }


class EvalEngine:
    """Per-task queues with serialized workers; truth stays server-side."""

    def __init__(
        self,
        truth: dict[str, GroundTruthStore],
        store: SubmissionStore,
        workers_per_task: int = 1,
    ) -> None:
        self.truth = truth
        self.store = store
        self._queues: dict[str, queue.Queue[str]] = {t: queue.Queue() for t in truth}
        self._outstanding = 0
        self._cond = threading.Condition()
        self._threads: list[threading.Thread] = []
        for task in truth:
            for _ in range(max(1, workers_per_task)):
                th = threading.Thread(target=self._worker, args=(task,), daemon=True)
                th.start()
                self._threads.append(th)
        # resume anything interrupted before the last shutdown
        for rec in list(store.records.values()):
            if rec.status in ("queued", "running"):
                self.enqueue(rec.id, rec.task)

    def enqueue(self, sid: str, task: str) -> None:
        with self._cond:
            self._outstanding += 1
        self._queues[task].put(sid)

    def _worker(self, task: str) -> None:
        q = self._queues[task]
        while True:
            sid = q.get()
            try:
                rec = self.store.get(sid)
                if rec is None:
                    continue
                self.store.set_running(sid)
                payload = self.store.payload(sid)
                scores = score_submission(self.truth[task], task, payload, rec.team)
                self.store.complete(sid, scores)
            except Exception as exc:  # noqa: BLE001 - recorded, never fatal
                self.store.fail(sid, str(exc))
            finally:
                with self._cond:
                    self._outstanding -= 1
                    self._cond.notify_all()
                q.task_done()

    def wait_idle(self, timeout: float = 30.0) -> bool:
        with self._cond:
            return self._cond.wait_for(lambda: self._outstanding == 0, timeout)


def _ranked_leaderboard(entries: list[SubmissionState], task: str) -> list[dict]:
    if task == DETECTION:
        ap_tables = {e.id: e.scores.get("ap_per_category", {}) for e in entries}
        categories = sorted({c for t in ap_tables.values() for c in t})
        wins = {e.id: 0 for e in entries}
        for cat in categories:
            best = max(
                (t[cat] for t in ap_tables.values() if cat in t), default=None
            )
            if best is None:
                continue
            for sid, t in ap_tables.items():
                if cat in t and t[cat] == best:
                    wins[sid] += 1
        ordered = sorted(
            entries,
            key=lambda e: (-wins[e.id], -e.scores.get("map", 0.0), e.submitted_at),
        )
        rows = []
        for rank, e in enumerate(ordered, start=1):
            row = e.public()
            row["rank"] = rank
            row["categories_won"] = wins[e.id]
            rows.append(row)
        return rows
    ordered = sorted(
        entries, key=lambda e: (e.scores.get("top5_error", 1.0), e.submitted_at)
    )
    rows = []
    for rank, e in enumerate(ordered, start=1):
        row = e.public()
        row["rank"] = rank
        rows.append(row)
    return rows


def create_app(
    config: ServiceConfig, clock: Callable[[], float] | None = None
) -> FastAPI:
    clock = clock or time.time
    truth = {
        task: load_ground_truth(path, task) for task, path in config.truth_dirs.items()
    }
    for task in truth:
        if task not in TASKS:
            raise ValueError(f"unknown task in config: {task!r}")
    tokens = load_tokens(config.tokens_path)
    store = SubmissionStore(config.storage_dir, snapshot_every=config.snapshot_every)
    engine = EvalEngine(truth, store, workers_per_task=config.eval_workers_per_task)

    app = FastAPI(title="visbench submission service")
    app.state.config = config
    app.state.store = store
    app.state.engine = engine
    app.state.clock = clock

    def error(status: int, message: str, **extra) -> JSONResponse:
        return JSONResponse({"error": message, **extra}, status_code=status)

    @app.post("/v1/submissions", status_code=202)
    async def submit(request: Request, task: str = ""):
        auth = request.headers.get("authorization", "")
        token = auth.removeprefix("Bearer ").strip() if auth.startswith("Bearer ") else ""
        team = tokens.get(token)
        if team is None:
            return error(401, "invalid or missing token")
        if task not in truth:
            return error(
                422, f"unknown task {task!r}; configured: {sorted(truth)}"
            )
        declared = request.headers.get("content-length")
        if declared is not None and int(declared) > config.payload_cap_bytes:
            return error(413, f"payload exceeds cap of {config.payload_cap_bytes} bytes")
        payload = await request.body()
        if len(payload) > config.payload_cap_bytes:
            return error(413, f"payload exceeds cap of {config.payload_cap_bytes} bytes")
        now = app.state.clock()
        limit_message = (
            f"rate limit: at most {config.max_submissions_per_window} submissions "
            f"per {config.window_seconds:.0f}s window per task"
        )
        if not store.within_rate_limit(
            team, task, now, config.window_seconds, config.max_submissions_per_window
        ):
            return error(429, limit_message)
        try:
            parse_submission(payload, task, truth[task], team=team)
        except FormatError as exc:
            return error(422, str(exc), line=exc.line)
        # re-checked atomically: only accepted submissions consume the quota
        rec = store.try_accept(
            team, task, now, payload,
            config.window_seconds, config.max_submissions_per_window,
        )
        if rec is None:
            return error(429, limit_message)
        engine.enqueue(rec.id, task)
        return {"id": rec.id, "status": rec.status}

    @app.get("/v1/submissions/{sid}")
    def submission_status(sid: str):
        rec = store.get(sid)
        if rec is None:
            return error(404, f"unknown submission {sid!r}")
        return rec.public()

    @app.get("/v1/leaderboard")
    def leaderboard(task: str = ""):
        if task not in truth:
            return error(422, f"unknown task {task!r}; configured: {sorted(truth)}")
        entries = store.completed_for_task(task)
        return {"task": task, "entries": _ranked_leaderboard(entries, task)}

    @app.get("/health")
    def health():
        return {"status": "ok", "tasks": sorted(truth)}

    return app
