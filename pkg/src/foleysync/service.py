"""HTTP service for the onset-editor workflow.

Endpoints:
  GET  /clips                 list clips with duration/fps metadata
  GET  /clips/{id}/video      raw video payload (npz frame archive or mp4)
  GET  /clips/{id}/onsets     detector onsets as a JSON list of seconds
  POST /generate              queue a generation job (202 + job id)
  GET  /jobs/{id}             job state and, when done, the result report
  GET  /audio/{id}            generated waveform as 16-bit PCM WAV

Generation runs on a single worker thread (sampling is compute-bound on one
core); the job store only moves queued -> running -> done|failed and results
never mutate afterwards.
"""

from __future__ import annotations

import logging
import queue
import threading
import uuid
from contextlib import asynccontextmanager
from pathlib import Path

import numpy as np
from fastapi import FastAPI
from fastapi.responses import FileResponse, JSONResponse

from foleysync import dataset, metrics, pipeline
from foleysync.diffusion.sampler import SamplerConfig

log = logging.getLogger(__name__)


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"error": {"code": code, "message": message}})


class OnsetService:
    """Owns the models, the clip corpus, and the generation job queue."""

    def __init__(self, corpus_root: Path, detector, stats: dataset.FrameStats,
                 net, provider, sampler: SamplerConfig, work_dir: Path,
                 tolerance: float = 0.050):
        self.corpus_root = Path(corpus_root)
        self.detector = detector
        self.stats = stats
        self.net = net
        self.provider = provider
        self.sampler = sampler
        self.tolerance = tolerance
        self.audio_dir = Path(work_dir) / "audio"
        self.audio_dir.mkdir(parents=True, exist_ok=True)

        self.clip_ids = sorted(
            p.name[:-len(".audio.wav")]
            for p in self.corpus_root.glob("*.audio.wav"))
        self._pairs: dict[str, dataset.MediaPair] = {}
        self._onset_cache: dict[str, list[float]] = {}
        self._jobs: dict[str, dict] = {}
        self._lock = threading.Lock()
        self._queue: queue.Queue = queue.Queue()
        self._worker: threading.Thread | None = None
        self.app = self._build_app()

    # -- corpus access --------------------------------------------------------

    def _pair(self, clip_id: str) -> dataset.MediaPair:
        if clip_id not in self._pairs:
            self._pairs[clip_id] = dataset.load_media_pair(self.corpus_root, clip_id)
        return self._pairs[clip_id]

    def _detector_onsets(self, clip_id: str) -> list[float]:
        if clip_id not in self._onset_cache:
            pair = self._pair(clip_id)
            labels = pipeline.detect_frame_labels(self.detector, pair, self.stats)
            times = np.flatnonzero(labels) / self.detector.config.fps
            self._onset_cache[clip_id] = [float(t) for t in times]
        return self._onset_cache[clip_id]

    # -- job machinery ---------------------------------------------------------

    def start(self):
        if self._worker is None or not self._worker.is_alive():
            self._worker = threading.Thread(target=self._work, daemon=True)
            self._worker.start()

    def stop(self):
        if self._worker is not None and self._worker.is_alive():
            self._queue.put(None)
            self._worker.join(timeout=30)
            self._worker = None

    def _work(self):
        while True:
            job_id = self._queue.get()
            if job_id is None:
                return
            with self._lock:
                job = self._jobs[job_id]
                job["state"] = "running"
            try:
                result = self._run_job(job["request"])
                with self._lock:
                    job["result"] = result
                    job["state"] = "done"
            except Exception as exc:
                log.exception("generation job %s failed", job_id)
                with self._lock:
                    job["error"] = str(exc)
                    job["state"] = "failed"

    def _run_job(self, request: dict) -> dict:
        sr = self.net.config.sample_rate
        duration = float(request["duration"])
        n = int(round(duration * sr))
        track = np.zeros(n, dtype=np.uint8)
        onsets = [float(t) for t in request["onsets"]]
        for t in onsets:
            track[min(int(np.floor(t * sr)), n - 1)] = 1

        cond = request["conditioning"]
        if cond["modality"] == "text":
            embedding = self.provider.embed_text(cond["payload"]).vector
        else:
            pair = self._pair(cond["payload"])
            audio, clip_sr = pair.load_audio()
            embedding = self.provider.embed_audio(audio, clip_sr).vector

        overrides = request.get("sampler") or {}
        sampler = SamplerConfig(
            steps=int(overrides.get("steps", self.sampler.steps)),
            cfg_scale=float(overrides.get("cfg_scale", self.sampler.cfg_scale)),
            seed=int(overrides.get("seed", self.sampler.seed)))
        audio = pipeline.generate_from_track(self.net, track, embedding, sampler)

        job_id = request["_job_id"]
        wav_path = self.audio_dir / f"{job_id}.wav"
        dataset.write_wav(wav_path, audio, sr)
        extracted = metrics.detect_audio_onsets(audio, sr)
        if onsets:
            match = metrics.match_onsets(np.asarray(sorted(extracted)),
                                         np.asarray(sorted(onsets)),
                                         tolerance=self.tolerance)
            sync_rate = match.tp / len(onsets)
        else:
            sync_rate = None
        return {
            "audio_url": f"/audio/{job_id}",
            "sample_rate": sr,
            "extracted_onsets": [float(t) for t in extracted],
            "requested_onsets": onsets,
            "sync_rate": sync_rate,
            "tolerance": self.tolerance,
        }

    def _validate_generate(self, body) -> str | JSONResponse:
        if not isinstance(body, dict):
            return _error(400, "bad_request", "body must be a JSON object")
        duration = body.get("duration")
        if not isinstance(duration, (int, float)) or duration <= 0:
            return _error(400, "bad_duration", "duration must be a positive number")
        onsets = body.get("onsets")
        if not isinstance(onsets, list) or any(
                not isinstance(t, (int, float)) for t in onsets):
            return _error(400, "bad_onsets", "onsets must be a list of seconds")
        for t in onsets:
            if t < 0 or t >= duration:
                return _error(400, "onset_out_of_range",
                              f"onset {t} outside [0, {duration})")
        cond = body.get("conditioning")
        if not isinstance(cond, dict) or set(cond) != {"modality", "payload"}:
            return _error(400, "bad_conditioning",
                          "conditioning needs exactly modality and payload")
        if cond["modality"] not in ("text", "audio"):
            return _error(400, "bad_conditioning",
                          "conditioning modality must be text or audio")
        if not isinstance(cond["payload"], str) or not cond["payload"].strip():
            return _error(400, "bad_conditioning",
                          "conditioning payload must be a non-empty string")
        if cond["modality"] == "audio" and cond["payload"] not in self.clip_ids:
            return _error(400, "unknown_clip",
                          f"conditioning clip {cond['payload']!r} not in corpus")
        sampler = body.get("sampler", {})
        if sampler:
            if not isinstance(sampler, dict):
                return _error(400, "bad_sampler", "sampler must be an object")
            try:
                SamplerConfig(steps=int(sampler.get("steps", self.sampler.steps)),
                              cfg_scale=float(sampler.get("cfg_scale",
                                                          self.sampler.cfg_scale)),
                              seed=int(sampler.get("seed", 0)))
            except (TypeError, ValueError) as exc:
                return _error(400, "bad_sampler", str(exc))
        return "ok"

    # -- HTTP surface -----------------------------------------------------------

    def _build_app(self) -> FastAPI:
        service = self

        @asynccontextmanager
        async def lifespan(app: FastAPI):
            service.start()
            yield
            service.stop()

        app = FastAPI(title="foleysync", lifespan=lifespan)

        @app.get("/clips")
        def list_clips():
            out = []
            for cid in service.clip_ids:
                pair = service._pair(cid)
                out.append({"id": cid, "duration": pair.duration,
                            "fps": pair.video.fps,
                            "n_frames": pair.video.n_frames,
                            "n_onsets": len(pair.annotations)})
            return {"clips": out}

        @app.get("/clips/{clip_id}/video")
        def clip_video(clip_id: str):
            if clip_id not in service.clip_ids:
                return _error(404, "unknown_clip", f"no clip {clip_id!r}")
            path = service._pair(clip_id).video.path
            media = "video/mp4" if path.suffix == ".mp4" else "application/octet-stream"
            return FileResponse(path, media_type=media, filename=path.name)

        @app.get("/clips/{clip_id}/onsets")
        def clip_onsets(clip_id: str):
            if clip_id not in service.clip_ids:
                return _error(404, "unknown_clip", f"no clip {clip_id!r}")
            return {"clip_id": clip_id, "fps": service.detector.config.fps,
                    "onsets": service._detector_onsets(clip_id)}

        @app.post("/generate", status_code=202)
        def generate(body: dict):
            verdict = service._validate_generate(body)
            if isinstance(verdict, JSONResponse):
                return verdict
            job_id = uuid.uuid4().hex[:12]
            body["_job_id"] = job_id
            with service._lock:
                service._jobs[job_id] = {"id": job_id, "state": "queued",
                                         "request": body, "result": None,
                                         "error": None}
            service._queue.put(job_id)
            return {"job_id": job_id, "state": "queued"}

        @app.get("/jobs/{job_id}")
        def job_state(job_id: str):
            with service._lock:
                job = service._jobs.get(job_id)
                if job is None:
                    return _error(404, "unknown_job", f"no job {job_id!r}")
                out = {"id": job["id"], "state": job["state"]}
                if job["state"] == "done":
                    out["result"] = job["result"]
                if job["state"] == "failed":
                    out["error"] = job["error"]
            return out

        @app.get("/audio/{job_id}")
        def audio(job_id: str):
            path = service.audio_dir / f"{job_id}.wav"
            if not path.exists():
                return _error(404, "unknown_audio", f"no audio for job {job_id!r}")
            return FileResponse(path, media_type="audio/wav", filename=path.name)

        return app


def create_service(corpus_root: Path, detector, stats, net, provider,
                   sampler: SamplerConfig, work_dir: Path) -> OnsetService:
    return OnsetService(corpus_root, detector, stats, net, provider, sampler,
                        work_dir)
