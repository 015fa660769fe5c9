"""Audio ingestion, loudness, manifests and synthetic corpora."""

from timbre.corpus.audio import (Waveform, first_second, load_wav, one_second_crops, resample,
                                 write_wav)
from timbre.corpus.ingest import ingest_irmas, ingest_nsynth, load_prepared, prepare_waveform
from timbre.corpus.loudness import ClippingWarning, measure_lufs, normalize_lufs
from timbre.corpus.manifest import (LabelSpace, ManifestEntry, energy_filter, make_splits,
                                    read_manifest, subsample_groups, write_manifest)
from timbre.corpus.synth import (SyntheticInstrumentSpec, default_specs, make_polyphonic,
                                 synth_corpus)

__all__ = [
    "ClippingWarning", "LabelSpace", "ManifestEntry", "SyntheticInstrumentSpec", "Waveform",
    "default_specs", "energy_filter", "first_second", "ingest_irmas", "ingest_nsynth",
    "load_prepared", "load_wav", "make_polyphonic", "make_splits", "measure_lufs",
    "normalize_lufs", "one_second_crops", "prepare_waveform", "read_manifest", "resample",
    "subsample_groups", "synth_corpus", "write_manifest", "write_wav",
]
