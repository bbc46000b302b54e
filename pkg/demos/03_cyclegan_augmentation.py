# coding: utf-8

# # Turning benign images into malware-like ones
#
# A CycleGAN learns two translators, G from benign to malware and F back again,
# with a discriminator on each side. The cycle term asks F(G(x)) to return x, so
# G cannot simply ignore its input. Once trained, G manufactures extra malware
# samples for a task that has few of them.

# In[1]:

import math

import numpy as np

from malmtl import codec, cyclegan as cg, mtl, pipeline, synth
from malmtl.experiments import corpus_datasets


# ## Sanity checks on the objective
#
# Identity translators reconstruct perfectly, and a discriminator that always
# answers 0.5 pays exactly 2 ln 2.

# In[2]:

rng = np.random.default_rng(0)
x = rng.uniform(-1, 1, (4, 3, 8, 8))
y = rng.uniform(-1, 1, (4, 3, 8, 8))
ident = cg.IdentityGenerator()
print(cg.cycle_loss(ident, ident, x, y))
print(cg.adversarial_loss(cg.ConstantDiscriminator(0.5), y, x)[0], 2 * math.log(2))


# ## Training on one task
#
# Take the Mach-O task and split its training images by class. Images of unequal
# size are cropped to a shared shape that is a multiple of 8.

# In[3]:

task = next(t for t in synth.default_synth_tasks() if t.task_id == "t6")
specs, train, _ = corpus_datasets(synth.SynthCorpusSpec((task,), samples_per_class=12, seed=2))
benign = [g for g, lab in train["t6"] if lab == 0]
malware = [g for g, lab in train["t6"] if lab == 1]
shape = pipeline.common_shape(benign + malware)
xs = cg.to_unit_range([cg.fit_to_shape(g, shape) for g in benign])
ys = cg.to_unit_range([cg.fit_to_shape(g, shape) for g in malware])
xs.shape, ys.shape


# In[4]:

cfg = cg.CycleGanConfig(epochs=5, batch_size=4, lr_g=2e-3, lr_d=2e-3, seed=0)
gan = cg.train_cyclegan(xs, ys, cfg)
for rec in gan.trace[::5]:
    print(rec.line())


# The cycle loss should fall as G and F learn to undo each other.

# In[5]:

cyc = [r.cycle_loss for r in gan.trace]
print(f"cycle loss {np.mean(cyc[:4]):.3f} -> {np.mean(cyc[-4:]):.3f}")


# ## Synthesizing samples
#
# Benign images are cycled when more samples are requested than exist. Each output
# is a regular pixel grid, ready for the PNG writer and the training pipeline.

# In[6]:

fakes = cg.augment(gan.G, benign, 20)
print(len(fakes), fakes[0].height, fakes[0].width)
real_mu = np.mean([codec.compute_stats(g).mu for g in malware], axis=0)
fake_mu = np.mean([codec.compute_stats(g).mu for g in fakes], axis=0)
print("malware mu  ", np.round(real_mu, 1))
print("synthetic mu", np.round(fake_mu, 1))


# Add the fakes to the malware class and train as usual.

# In[7]:

augmented = train["t6"] + [(g, 1) for g in fakes]
net = mtl.build_network(mtl.desk_config(), specs, seed=0)
mtl.train(net, {"t6": augmented}, ["t6"], mtl.Schedule(epochs=3), seed=0)[-1].line()
