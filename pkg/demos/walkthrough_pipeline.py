"""End-to-end walkthrough on a small synthetic corpus.

Builds 12 synthetic "ads", runs every CLI stage in order and prints the
rendered F1 table. Takes well under a minute:

    python demos/walkthrough_pipeline.py [workdir]
"""
import sys
import tempfile
from pathlib import Path

from adaffect.pipeline import main
from adaffect.synthetic import make_corpus

work = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="adaffect-"))
manifest = make_corpus(work / "corpus", n_videos=12, durations=(6.0, 9.0), seed=3)
print(f"corpus written to {manifest.parent}")

common = ["--manifest", str(manifest), "--out", str(work / "out"),
          "--channels", "ConstantBlur,ObjectRetained,EyeRoi,EyeRoiContextBlur",
          "--classifiers", "LDA,LSVM", "--window", "All"]
for stage in ("synth", "gaze", "features", "eval", "stats", "report"):
    print(f"\n== {stage}")
    code = main([stage, *common])
    if code:
        sys.exit(code)
print(f"\nartifacts under {work / 'out'}")
