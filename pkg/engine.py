import argparse
import sys

from dotenv import load_dotenv

# Ensure environment is loaded before anything else
load_dotenv()


class NoteFlowEngine:
    """
    NoteFlow: multiclass note detection with out-of-distribution rejection.
    Orchestrates synth -> features -> train -> score -> segment -> eval,
    one artifact set per command, every artifact stamped with the config hash.
    """

    def __init__(self, config=None, out_dir=None):
        from config import load_pipeline_config

        self.config = config or load_pipeline_config()
        self.out_dir = out_dir or self.config.output_dir

        # Object placeholders
        self.obs = None
        self.store = None
        self.hlds_filter = None

    def _setup(self):
        """Initializes logging, the artifact store and the HLDS filter once."""
        if self.obs is not None:
            return

        from evaluation.experiment import hlds_filter_for
        from memory.artifact_store import ArtifactStore
        from observability.manager import ObservabilityManager

        self.obs = ObservabilityManager(name="noteflow-engine")
        self.store = ArtifactStore(self.out_dir)
        self.hlds_filter = hlds_filter_for(self.config)

    @property
    def provenance(self):
        return self.config.provenance()

    @property
    def config_sha256(self):
        return self.provenance["config_sha256"]

    def _begin(self, stage):
        self._setup()
        trace_id = self.obs.start_request()
        self.obs.info(f"{stage} started", extra={"config_sha256": self.config_sha256})
        return trace_id, self.obs.start_timer()

    def _finish(self, stage, trace_id, started, outputs, **details):
        latency = self.obs.stop_timer(started)
        self.obs.add_trace(stage, "completed", outputs=[str(p) for p in outputs], **details)
        return {
            "outputs": [str(p) for p in outputs],
            **details,
            "metadata": {
                "latency": f"{latency}s",
                "trace_id": trace_id,
                "config_sha256": self.config_sha256,
                "stages": dict(self.obs.stage_count),
            },
        }

    def _check_provenance(self, document, source):
        digest = document.get("metadata", {}).get("config_sha256") if isinstance(document, dict) else document
        if digest and digest != self.config_sha256:
            self.obs.warning(
                "artifact was produced under a different config",
                extra={"artifact": str(source), "artifact_sha256": digest, "config_sha256": self.config_sha256},
            )

    def _load_corpus(self, audio_path, manifest_path):
        from corpus.synth import Corpus

        samples, sample_rate = self.store.load_wav(audio_path)
        manifest = self.store.load_json(manifest_path)
        self._check_provenance(manifest, manifest_path)
        return Corpus.from_manifest(samples, sample_rate, manifest)

    def _features(self, samples):
        from features.hlds import extract_features

        return extract_features(samples, self.config.hlds, self.hlds_filter)

    # --- Commands ---
    def synth(self, seed=None):
        from corpus.synth import NoteSynthesizer

        trace_id, started = self._begin("synth")
        seed = self.config.seed if seed is None else seed
        corpus = NoteSynthesizer(self.config.corpus, self.config.hlds).synth(seed)

        wav = self.store.save_wav("corpus.wav", corpus.samples, corpus.sample_rate)
        manifest = self.store.save_json(
            "manifest.json", {**corpus.manifest(), "seed": seed, "metadata": self.provenance}
        )
        return self._finish("synth", trace_id, started, [wav, manifest], n_instances=len(corpus.instances))

    def features(self, audio_path):
        import pandas as pd

        from features.audio import window_starts

        trace_id, started = self._begin("features")
        samples, _ = self.store.load_wav(audio_path)
        Z = self._features(samples)
        hlds = self.config.hlds
        frame = pd.DataFrame(Z, columns=[f"z_{i}" for i in range(Z.shape[1])])
        frame.insert(0, "start_sample", window_starts(Z.shape[0], hlds.window_len, hlds.overlap))
        frame.insert(0, "window", range(Z.shape[0]))
        out = self.store.save_frame("features.csv", frame, self.config_sha256)
        return self._finish("features", trace_id, started, [out], n_windows=int(Z.shape[0]))

    def train(self, algorithm="mddkm", seed=None, audio_path="corpus.wav", manifest_path="manifest.json"):
        from evaluation.experiment import split_corpus
        from evaluation.metrics import GroundTruth
        from scoring.backends import fit, model_to_document, threshold, training_set_from_windows

        trace_id, started = self._begin("train")
        seed = self.config.seed if seed is None else seed
        hlds = self.config.hlds
        training_classes = self.config.corpus.training_classes

        # 1. Split the corpus for this seed
        corpus = self._load_corpus(audio_path, manifest_path)
        split = split_corpus(corpus, training_classes, self.config.instances_per_class, seed)
        train_clip, test_clip = corpus.clip(split.train), corpus.clip(split.test)

        # 2. Features and per-class training blocks
        Z_train = self._features(train_clip.samples)
        truth = GroundTruth.from_sample_instances(
            train_clip.instances, train_clip.n_samples, hlds.window_len, hlds.overlap, training_classes
        )
        training_set = training_set_from_windows(Z_train, truth.window_labels, training_classes)
        self.obs.add_trace("features", "extracted", n_windows=int(Z_train.shape[0]))

        # 3. Fit and threshold
        model = fit(algorithm, training_set, self.config, seed)
        tau = threshold(model, Z_train, self.config)
        self.obs.add_trace("train", algorithm, tau=tau)

        # 4. Persist model, split and the held-out clip
        outputs = [
            self.store.save_json(f"model_{algorithm}.json", model_to_document(model, tau, self.provenance)),
            self.store.save_json("split.json", {**split.to_document(), "metadata": self.provenance}),
            self.store.save_wav("test_clip.wav", test_clip.samples, test_clip.sample_rate),
            self.store.save_json("test_manifest.json", {**test_clip.manifest(), "seed": seed, "metadata": self.provenance}),
        ]
        return self._finish("train", trace_id, started, outputs, algorithm=algorithm, tau=tau)

    def score(self, model_path, audio_path="test_clip.wav"):
        import pandas as pd

        from features.audio import window_starts
        from scoring.backends import algorithm_of, decision_track, model_from_document, raw_track

        trace_id, started = self._begin("score")
        document = self.store.load_json(model_path)
        self._check_provenance(document, model_path)
        model, _ = model_from_document(document)
        algorithm = algorithm_of(model)

        samples, _ = self.store.load_wav(audio_path)
        Z = self._features(samples)
        raw = raw_track(model, Z, self.config)
        transformed = decision_track(raw, self.config)

        hlds = self.config.hlds
        frame = pd.DataFrame({
            "window": range(raw.n_windows),
            "start_sample": window_starts(raw.n_windows, hlds.window_len, hlds.overlap),
        })
        for i, label in enumerate(raw.labels):
            frame[f"raw_{label}"] = raw.values[:, i]
        for i, label in enumerate(raw.labels):
            frame[f"transformed_{label}"] = transformed.values[:, i]
        out = self.store.save_frame(f"scores_{algorithm}.csv", frame, self.config_sha256)
        return self._finish("score", trace_id, started, [out], algorithm=algorithm, n_windows=raw.n_windows)

    def segment(self, model_path, scores_path=None):
        from scoring.backends import algorithm_of, model_from_document
        from tools.decision_rules import ScoreTrack, decide, segments_to_frame

        trace_id, started = self._begin("segment")
        model, tau = model_from_document(self.store.load_json(model_path))
        algorithm = algorithm_of(model)
        if self.config.decision.tau is not None:
            tau = self.config.decision.tau

        scores_path = scores_path or f"scores_{algorithm}.csv"
        frame, digest = self.store.load_frame(scores_path)
        self._check_provenance(digest, scores_path)
        columns = [f"transformed_{label}" for label in model.labels]
        missing = [c for c in columns if c not in frame.columns]
        if missing:
            from errors import SchemaError

            raise SchemaError(f"score file lacks columns {missing}")

        hlds = self.config.hlds
        track = ScoreTrack(
            values=frame[columns].to_numpy(),
            labels=tuple(model.labels),
            semantics="similarity",
            hop=hlds.hop,
            window_len=hlds.window_len,
        )
        segments = decide(track, self.config.decision, tau)
        out = self.store.save_frame(
            f"segments_{algorithm}.csv", segments_to_frame(segments, track.hop, track.window_len), self.config_sha256
        )
        labels = sorted({s.label for s in segments})
        return self._finish("segment", trace_id, started, [out], algorithm=algorithm, n_segments=len(segments), labels=labels)

    def evaluate(self, seeds=None, algorithms=("mddkm", "pknn"), workers=1, audio_path="corpus.wav", manifest_path="manifest.json"):
        from evaluation.experiment import run_experiment

        trace_id, started = self._begin("eval")
        seeds = list(seeds) if seeds else list(self.config.seeds)
        corpus = self._load_corpus(audio_path, manifest_path)
        result = run_experiment(corpus, seeds, algorithms, self.config, workers=workers)
        summary = result.summary()

        outputs = [
            self.store.save_json("summary.json", {**summary, "metadata": self.provenance}),
            self.store.save_frame("reports.csv", result.reports_frame(), self.config_sha256),
        ]
        for report in result.reports():
            name = f"confusion_{report.algorithm}_{report.unit}_seed{report.seed}.csv"
            outputs.append(self.store.save_frame(name, report.confusion_frame().reset_index(), self.config_sha256))
        return self._finish("eval", trace_id, started, outputs, n_seeds=len(seeds), p_values=summary["p_values"])


# --- COMMAND LINE ---
def parse_seeds(text):
    """'1-50' or '1,3,7' -> list of ints."""
    from errors import RejectedInputError

    seeds = []
    try:
        for part in text.split(","):
            if "-" in part.strip()[1:]:
                lo, hi = part.rsplit("-", 1)
                seeds.extend(range(int(lo), int(hi) + 1))
            else:
                seeds.append(int(part))
    except ValueError as e:
        raise RejectedInputError(f"cannot parse seeds {text!r}") from e
    if not seeds:
        raise RejectedInputError("empty seed list")
    return seeds


def build_parser():
    parser = argparse.ArgumentParser(prog="noteflow", description="Multiclass note detection pipeline")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON (default: $NOTEFLOW_CONFIG or built-in)")
    common.add_argument("--out", help="artifact directory (default: $NOTEFLOW_OUTPUT_DIR or ./out)")
    common.add_argument("--seed", type=int)
    common.add_argument("--algorithm", choices=["mddkm", "pknn"])

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="render the synthetic corpus")

    p = sub.add_parser("features", parents=[common], help="export HLDS features of a WAV")
    p.add_argument("--audio", default="corpus.wav")

    p = sub.add_parser("train", parents=[common], help="split the corpus and fit a model")
    p.add_argument("--audio", default="corpus.wav")
    p.add_argument("--manifest", default="manifest.json")

    p = sub.add_parser("score", parents=[common], help="score every window of a WAV")
    p.add_argument("--model")
    p.add_argument("--audio", default="test_clip.wav")

    p = sub.add_parser("segment", parents=[common], help="turn a score file into labeled segments")
    p.add_argument("--model")
    p.add_argument("--scores")

    p = sub.add_parser("eval", parents=[common], help="multi-seed evaluation of both algorithms")
    p.add_argument("--audio", default="corpus.wav")
    p.add_argument("--manifest", default="manifest.json")
    p.add_argument("--seeds", help="e.g. 1-50 or 1,2,3 (default: config seeds)")
    p.add_argument("--workers", type=int, default=1)
    return parser


def main(argv=None):
    import json

    from config import load_pipeline_config
    from errors import NoteFlowError

    args = build_parser().parse_args(argv)
    engine = None
    try:
        config = load_pipeline_config(args.config)
        engine = NoteFlowEngine(config, out_dir=args.out)
        algorithm = args.algorithm or "mddkm"

        if args.command == "synth":
            result = engine.synth(seed=args.seed)
        elif args.command == "features":
            result = engine.features(args.audio)
        elif args.command == "train":
            result = engine.train(algorithm, seed=args.seed, audio_path=args.audio, manifest_path=args.manifest)
        elif args.command == "score":
            result = engine.score(args.model or f"model_{algorithm}.json", args.audio)
        elif args.command == "segment":
            result = engine.segment(args.model or f"model_{algorithm}.json", args.scores)
        else:
            algorithms = (args.algorithm,) if args.algorithm else ("mddkm", "pknn")
            seeds = parse_seeds(args.seeds) if args.seeds else None
            result = engine.evaluate(seeds, algorithms, args.workers, args.audio, args.manifest)
    except NoteFlowError as e:
        if engine is not None and engine.obs is not None:
            engine.obs.error(
                f"Pipeline Error: {e}",
                extra={"exit_code": e.exit_code, "trace": engine.obs.get_full_trace(), **e.diagnostics},
            )
        print(f"noteflow {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        if engine is not None and engine.obs is not None:
            engine.obs.error(f"Unexpected Error: {e}")
        print(f"noteflow {args.command}: unexpected error: {e}", file=sys.stderr)
        return 1

    print(json.dumps(result, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
