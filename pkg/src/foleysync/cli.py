"""Command-line entry points.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training or
inference failure.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from foleysync import dataset
from foleysync.config import load_config

log = logging.getLogger("foleysync")


def _setup_logging(verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _parse_times(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise click.UsageError(f"bad onset list {text!r}: {exc}") from exc


def _load_provider(path: Path):
    from foleysync import embedding
    return embedding.load_provider(Path(path))


def _embedding_from_flags(provider, text: str | None, audio_ref: Path | None):
    if (text is None) == (audio_ref is None):
        raise click.UsageError("give exactly one of --text or --audio-ref")
    if text is not None:
        return provider.embed_text(text).vector
    clip, sr = dataset.read_wav(Path(audio_ref))
    return provider.embed_audio(clip, sr).vector


@click.group()
@click.option("--verbose", is_flag=True, help="debug logging")
def cli(verbose):
    """Onset-synchronized foley synthesis toolkit."""
    _setup_logging(verbose)


# -- data ------------------------------------------------------------------------


@cli.command("make-synthetic")
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--n-clips", default=30, show_default=True)
@click.option("--seconds", default=8.0, show_default=True)
@click.option("--fps", default=15.0, show_default=True)
@click.option("--sr", default=8000, show_default=True)
@click.option("--classes", default=3, show_default=True)
@click.option("--seed", default=0, show_default=True)
def make_synthetic(out, n_clips, seconds, fps, sr, classes, seed):
    """Render the ground-truth synthetic corpus (flashing dots + class tones)."""
    ids = dataset.make_synthetic_dataset(out, n_clips=n_clips, clip_seconds=seconds,
                                         fps=fps, sr=sr, n_classes=classes, seed=seed)
    click.echo(f"wrote {len(ids)} clips to {out}")


@cli.command("prepare-data")
@click.argument("src", type=click.Path(exists=True, path_type=Path))
@click.argument("dst", type=click.Path(path_type=Path))
@click.option("--sr", default=None, type=int,
              help="resample audio to this rate (default: keep source rate)")
def prepare_data(src, dst, sr):
    """Convert a Greatest-Hits-style dump into the corpus normal form.

    Expects per-clip files `<id>_denoised.wav` (or `<id>.wav`), onset times in
    `<id>_times.txt` (whitespace columns: seconds, material, action, ...),
    and optionally `<id>.mp4` / `<id>_mic.mp4`.
    """
    from scipy.signal import resample_poly

    dst = Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    converted = 0
    for times_path in sorted(Path(src).glob("*_times.txt")):
        clip_id = times_path.name[:-len("_times.txt")]
        wav_src = next((p for p in (Path(src) / f"{clip_id}_denoised.wav",
                                    Path(src) / f"{clip_id}.wav") if p.exists()), None)
        if wav_src is None:
            log.warning("skipping %s: no audio file", clip_id)
            continue
        annotations = []
        for line_no, line in enumerate(times_path.read_text().splitlines(), 1):
            parts = line.split()
            if not parts:
                continue
            try:
                t = float(parts[0])
            except ValueError as exc:
                raise dataset.DataError(
                    f"{times_path}:{line_no}: bad time {parts[0]!r}") from exc
            material = parts[1] if len(parts) > 1 else ""
            action = parts[2] if len(parts) > 2 else ""
            annotations.append(dataset.OnsetAnnotation(t, material, action))

        audio, src_sr = dataset.read_wav(wav_src)
        out_sr = sr or src_sr
        if out_sr != src_sr:
            audio = resample_poly(audio, out_sr, src_sr)
        dataset.write_wav(dst / f"{clip_id}.audio.wav", audio, out_sr)
        dataset.write_annotations(dst / f"{clip_id}.annotations.tsv", annotations)
        video_src = next((p for p in (Path(src) / f"{clip_id}.mp4",
                                      Path(src) / f"{clip_id}_mic.mp4")
                          if p.exists()), None)
        if video_src is not None:
            (dst / f"{clip_id}.video.mp4").write_bytes(video_src.read_bytes())
        else:
            log.warning("%s has no video file; audio/annotations still converted",
                        clip_id)
        converted += 1
    if converted == 0:
        raise dataset.DataError(f"no '*_times.txt' clips found under {src}")
    click.echo(f"converted {converted} clips into {dst}")


# -- training ---------------------------------------------------------------------


@cli.command("train-onset")
@click.option("--corpus", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--preset", default="desk", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path))
@click.option("--augment/--no-augment", default=True, show_default=True)
@click.option("--epochs", default=None, type=int,
              help="training epochs (steps-per-epoch batches each)")
@click.option("--steps-per-epoch", default=50, show_default=True)
@click.option("--bs", default=None, type=int)
@click.option("--lr", default=None, type=float)
@click.option("--wd", default=None, type=float)
@click.option("--seed", default=None, type=int)
@click.option("--split-seed", default=0, show_default=True)
def train_onset(corpus, out, preset, config_path, augment, epochs,
                steps_per_epoch, bs, lr, wd, seed, split_seed):
    """Train the per-frame onset detector."""
    import torch
    from foleysync import onset_detector

    cfg = load_config(config_path, preset=preset)
    hp = cfg.detector_train
    if bs is not None:
        hp.batch_size = bs
    if lr is not None:
        hp.lr = lr
    if wd is not None:
        hp.weight_decay = wd
    if seed is not None:
        hp.seed = seed
    if epochs is not None:
        hp.max_steps = epochs * steps_per_epoch

    manifest = dataset.load_manifest(Path(corpus), seed=split_seed)
    torch.manual_seed(hp.seed)
    detector = onset_detector.build_detector(cfg.detector)
    report = onset_detector.train_onset_detector(
        detector, Path(corpus), manifest, hp, Path(out), augment=augment,
        steps_per_epoch=steps_per_epoch)
    click.echo(f"trained {report['epochs']} epochs "
               f"(best val BCE {report['best_val']:.4f}); "
               f"checkpoints in {out}")


@cli.command("train-diffusion")
@click.option("--corpus", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--preset", default="desk", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path))
@click.option("--steps", default=None, type=int)
@click.option("--bs", default=None, type=int)
@click.option("--lr", default=None, type=float)
@click.option("--wd", default=None, type=float)
@click.option("--seed", default=None, type=int)
@click.option("--split-seed", default=0, show_default=True)
@click.option("--provider", "provider_path", type=click.Path(path_type=Path),
              help="existing embedding provider checkpoint (default: fit a toy "
                   "provider on the train split and save it next to the model)")
@click.option("--provider-steps", default=300, show_default=True)
@click.option("--resume", is_flag=True, help="resume from <out>/last.pt")
def train_diffusion_cmd(corpus, out, preset, config_path, steps, bs, lr, wd,
                        seed, split_seed, provider_path, provider_steps, resume):
    """Train the onset-conditioned waveform diffusion model."""
    import torch
    from foleysync import embedding
    from foleysync.diffusion.model import UNet1d
    from foleysync.diffusion.train import load_denoiser, train_diffusion

    cfg = load_config(config_path, preset=preset)
    hp = cfg.diffusion_train
    if steps is not None:
        hp.max_steps = steps
    if bs is not None:
        hp.batch_size = bs
    if lr is not None:
        hp.lr = lr
    if wd is not None:
        hp.weight_decay = wd
    if seed is not None:
        hp.seed = seed

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = dataset.load_manifest(Path(corpus), seed=split_seed)

    if provider_path is not None:
        provider = embedding.load_provider(Path(provider_path))
    else:
        provider_file = out / "provider.pt"
        if provider_file.exists():
            provider = embedding.load_provider(provider_file)
        else:
            provider = embedding.fit_toy_provider(
                Path(corpus), manifest.train, dim=cfg.embedding_dim,
                sr=cfg.sample_rate, steps=provider_steps, seed=hp.seed)
            provider.save(provider_file)
            click.echo(f"fitted toy embedding provider -> {provider_file}")

    resume_from = out / "last.pt" if resume else None
    if resume_from is not None and not resume_from.exists():
        raise dataset.DataError(f"--resume given but {resume_from} does not exist")
    if resume_from is not None:
        net, _ = load_denoiser(resume_from)
    else:
        torch.manual_seed(hp.seed)
        net = UNet1d(cfg.denoiser)
    report = train_diffusion(net, Path(corpus), manifest, provider, hp, out,
                             resume_from=resume_from)
    click.echo(f"trained {report['steps']} steps "
               f"(final loss {report['final_loss']:.4f}); checkpoints in {out}")


# -- inference ----------------------------------------------------------------------


@cli.command("generate")
@click.option("--diffusion", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--provider", "provider_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--onsets", required=True, help="comma-separated onset times in seconds")
@click.option("--duration", default=None, type=float,
              help="output length in seconds (default: last onset + 1)")
@click.option("--text", default=None, help="text conditioning query")
@click.option("--audio-ref", type=click.Path(exists=True, path_type=Path),
              help="conditioning reference clip (wav)")
@click.option("--steps", default=None, type=int)
@click.option("--cfg-scale", default=None, type=float)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
def generate(diffusion, provider_path, onsets, duration, text, audio_ref,
             steps, cfg_scale, seed, out):
    """Synthesize audio for explicit onset times."""
    from foleysync import pipeline
    from foleysync.diffusion.sampler import SamplerConfig
    from foleysync.diffusion.train import load_denoiser

    times = sorted(_parse_times(onsets))
    if not times:
        raise click.UsageError("--onsets must contain at least one time")
    if any(t < 0 for t in times):
        raise dataset.DataError("onset times must be non-negative")
    duration = duration if duration is not None else times[-1] + 1.0
    if times[-1] >= duration:
        raise dataset.DataError(
            f"onset {times[-1]} beyond requested duration {duration}")

    net, _ = load_denoiser(Path(diffusion))
    prov = _load_provider(provider_path)
    embedding_vec = _embedding_from_flags(prov, text, audio_ref)
    sr = net.config.sample_rate
    n = int(round(duration * sr))
    track = np.zeros(n, dtype=np.uint8)
    for t in times:
        track[min(int(np.floor(t * sr)), n - 1)] = 1
    sampler = SamplerConfig(steps=steps or 50, cfg_scale=2.0 if cfg_scale is None
                            else cfg_scale, seed=seed)
    audio = pipeline.generate_from_track(net, track, embedding_vec, sampler)
    dataset.write_wav(Path(out), audio, sr)
    click.echo(f"wrote {duration:.2f}s at {sr} Hz -> {out}")


@cli.command("pipeline")
@click.option("--corpus", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--clip", "clip_id", required=True)
@click.option("--detector", "detector_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--diffusion", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--provider", "provider_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--text", default=None)
@click.option("--audio-ref", type=click.Path(exists=True, path_type=Path))
@click.option("--steps", default=None, type=int)
@click.option("--cfg-scale", default=None, type=float)
@click.option("--seed", default=0, show_default=True)
@click.option("--tolerance", default=0.05, show_default=True)
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
def pipeline_cmd(corpus, clip_id, detector_path, diffusion, provider_path, text,
                 audio_ref, steps, cfg_scale, seed, tolerance, out_dir):
    """Detect onsets in a clip's video, then synthesize matching audio."""
    from foleysync import onset_detector, pipeline
    from foleysync.diffusion.sampler import SamplerConfig
    from foleysync.diffusion.train import load_denoiser

    detector, payload = onset_detector.load_detector(Path(detector_path))
    stats = payload.get("frame_stats")
    if stats is None:
        raise dataset.DataError(
            f"{detector_path} lacks frame statistics; retrain with this toolkit")
    net, _ = load_denoiser(Path(diffusion))
    prov = _load_provider(provider_path)

    pair = dataset.load_media_pair(Path(corpus), clip_id)
    if text is None and audio_ref is None:
        embedding_vec = prov.embed_audio(*pair.load_audio()).vector
    else:
        embedding_vec = _embedding_from_flags(prov, text, audio_ref)
    sampler = SamplerConfig(steps=steps or 50, cfg_scale=2.0 if cfg_scale is None
                            else cfg_scale, seed=seed)
    report = pipeline.run_pipeline(pair, detector, stats, net, embedding_vec,
                                   sampler, tolerance=tolerance)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wav_path = out_dir / f"{clip_id}.generated.wav"
    dataset.write_wav(wav_path, report.pop("audio"), report["sample_rate"])
    report.pop("frame_labels")
    report.pop("onset_track")
    report_path = out_dir / f"{clip_id}.report.json"
    report_path.write_text(json.dumps(report, indent=2))
    click.echo(f"sync rate {report['sync_rate']:.2%} "
               f"({report['matched']}/{len(report['detected_onsets'])} onsets); "
               f"audio -> {wav_path}")


@cli.command("evaluate")
@click.option("--corpus", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--protocol", type=click.Choice(["onset", "synthesis", "full"]),
              required=True)
@click.option("--detector", "detector_path", type=click.Path(exists=True, path_type=Path))
@click.option("--diffusion", type=click.Path(exists=True, path_type=Path))
@click.option("--provider", "provider_path", type=click.Path(exists=True, path_type=Path))
@click.option("--steps", default=None, type=int)
@click.option("--cfg-scale", default=None, type=float)
@click.option("--seed", default=0, show_default=True)
@click.option("--split-seed", default=0, show_default=True)
@click.option("--tolerance", default=0.05, show_default=True)
@click.option("--max-clips", default=None, type=int,
              help="cap the number of evaluated test clips")
@click.option("--out", type=click.Path(path_type=Path),
              help="write the JSON report here as well as printing it")
def evaluate(corpus, protocol, detector_path, diffusion, provider_path, steps,
             cfg_scale, seed, split_seed, tolerance, max_clips, out):
    """Run one of the three evaluation protocols on the test split."""
    from foleysync import onset_detector, pipeline
    from foleysync.diffusion.sampler import SamplerConfig
    from foleysync.diffusion.train import load_denoiser

    manifest = dataset.load_manifest(Path(corpus), seed=split_seed)
    test_ids = manifest.test[:max_clips] if max_clips else manifest.test

    if protocol == "onset":
        if detector_path is None:
            raise click.UsageError("--protocol onset requires --detector")
        detector, payload = onset_detector.load_detector(Path(detector_path))
        stats = payload.get("frame_stats")
        if stats is None:
            raise dataset.DataError(f"{detector_path} lacks frame statistics")
        report = onset_detector.evaluate_detector(detector, Path(corpus),
                                                  test_ids, stats)
        report["protocol"] = "onset"
    else:
        if diffusion is None or provider_path is None:
            raise click.UsageError(
                f"--protocol {protocol} requires --diffusion and --provider")
        net, _ = load_denoiser(Path(diffusion))
        prov = _load_provider(provider_path)
        sampler = SamplerConfig(steps=steps or 50, cfg_scale=2.0 if cfg_scale is None
                                else cfg_scale, seed=seed)
        detector = stats = None
        if protocol == "full":
            if detector_path is None:
                raise click.UsageError("--protocol full requires --detector")
            detector, payload = onset_detector.load_detector(Path(detector_path))
            stats = payload.get("frame_stats")
            if stats is None:
                raise dataset.DataError(f"{detector_path} lacks frame statistics")
        report = pipeline.evaluate_corpus(
            Path(corpus), test_ids, net, prov, sampler, protocol,
            detector=detector, stats=stats, tolerance=tolerance)

    text = json.dumps(report, indent=2)
    click.echo(text)
    if out:
        Path(out).write_text(text)


@cli.command("plot")
@click.option("--reference", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--generated", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--onsets", required=True,
              help="annotations TSV path or comma-separated seconds")
@click.option("--out", type=click.Path(path_type=Path), required=True)
def plot(reference, generated, onsets, out):
    """Stacked reference/generated spectrograms with onset markers."""
    from foleysync import pipeline

    ref, sr = dataset.read_wav(Path(reference))
    gen, gen_sr = dataset.read_wav(Path(generated))
    if gen_sr != sr:
        raise dataset.DataError(f"sample-rate mismatch: {sr} vs {gen_sr}")
    if Path(onsets).exists():
        times = [a.time for a in dataset.read_annotations(Path(onsets))]
    else:
        times = _parse_times(onsets)
    track = np.zeros(len(ref), dtype=np.uint8)
    for t in times:
        idx = int(np.floor(t * sr))
        if 0 <= idx < len(track):
            track[idx] = 1
    pipeline.plot_diagnostic(ref, gen, track, sr, Path(out))
    click.echo(f"wrote {out}")


@cli.command("serve")
@click.option("--corpus", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--detector", "detector_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--diffusion", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--provider", "provider_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8080, show_default=True)
@click.option("--steps", default=25, show_default=True)
@click.option("--cfg-scale", default=2.0, show_default=True)
@click.option("--work-dir", type=click.Path(path_type=Path), default=None,
              help="job artifact directory (default: a temp dir)")
def serve(corpus, detector_path, diffusion, provider_path, host, port, steps,
          cfg_scale, work_dir):
    """Serve the onset-editor HTTP API."""
    import tempfile

    import uvicorn
    from foleysync import onset_detector, service
    from foleysync.diffusion.sampler import SamplerConfig
    from foleysync.diffusion.train import load_denoiser

    detector, payload = onset_detector.load_detector(Path(detector_path))
    stats = payload.get("frame_stats")
    if stats is None:
        raise dataset.DataError(f"{detector_path} lacks frame statistics")
    net, _ = load_denoiser(Path(diffusion))
    prov = _load_provider(provider_path)
    work = Path(work_dir) if work_dir else Path(tempfile.mkdtemp(prefix="foleysync-"))
    svc = service.create_service(Path(corpus), detector, stats, net, prov,
                                 SamplerConfig(steps=steps, cfg_scale=cfg_scale,
                                               seed=0), work)
    click.echo(f"serving {len(svc.clip_ids)} clips on http://{host}:{port}")
    uvicorn.run(svc.app, host=host, port=port, log_level="info")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return 1 if exc.exit_code else 0
    except (click.UsageError, click.BadParameter) as exc:
        exc.show()
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except dataset.DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    except (ValueError, OSError) as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    except RuntimeError as exc:
        click.echo(f"run failed: {exc}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
