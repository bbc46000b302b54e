# coding: utf-8

# # The command line, end to end
#
# The `malmtl` command wraps the library in five subcommands. This script drives
# them through `cli.main` so it runs anywhere; from a shell the same steps are
# `malmtl synth ...`, `malmtl convert ...` and so on.

# In[1]:

import tempfile
from pathlib import Path

from malmtl import cli

root = Path(tempfile.mkdtemp(prefix="malmtl-demo-"))
root


# Generate a labelled corpus of container files. The manifest lists path, task,
# label, split and a synthetic flag, tab separated.

# In[2]:

cli.main(["synth", "--tasks", "t1,t3,t6", "--samples-per-class", "6", "--seed", "7", "--out", str(root / "raw")])
print((root / "raw" / "manifest.tsv").read_text().splitlines()[:4])


# Convert every file to a PNG. Labels follow the files into the new manifest.

# In[3]:

cli.main(["convert", "--manifest", str(root / "raw" / "manifest.tsv"), "--out", str(root / "img")])


# Train on the images. Each line of the log is epoch, task, loss and accuracy.

# In[4]:

cli.main(["train", str(root / "img" / "manifest.tsv"), "--epochs", "3", "--activation", "prelu",
          "--seed", "7", "--out", str(root / "train")])


# Grow the Mach-O task with synthetic malware, then train again on the augmented manifest.

# In[5]:

cli.main(["augment", str(root / "img" / "manifest.tsv"), "--task", "t6", "-n", "12", "--epochs", "2",
          "--out", str(root / "aug")])
cli.main(["train", str(root / "aug" / "manifest.tsv"), "--epochs", "3", "--seed", "7",
          "--out", str(root / "train-aug")])


# Evaluate both checkpoints on the held-out split. The reports and confusion
# matrices land in the output directory as well.

# In[6]:

for name in ("train", "train-aug"):
    cli.main(["eval", str(root / name / "model.ckpt"), str(root / "img" / "manifest.tsv"),
              "--out", str(root / f"eval-{name}")])
sorted(p.name for p in (root / "eval-train").iterdir())


# Errors map to exit codes: 3 for a partial conversion, 4 for bad configuration,
# 5 for dataset problems.

# In[7]:

junk = root / "junk.exe"
junk.write_bytes(b"MZ" + b"\xff" * 40)
cli.main(["convert", str(junk), "--out", str(root / "junk")])
