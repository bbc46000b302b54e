# coding: utf-8

# # From executables to pictures
#
# A program file is a byte string. Read three bytes at a time and each triple is
# one RGB pixel; lay the pixels out row by row and the file becomes an image. Here
# we build a tiny ELF, pull out its sections, and look at it as a picture.

# In[1]:

import numpy as np

from malmtl import codec, synth
from malmtl.containers import MalformedContainer, flatten, parse


# Start with a small synthetic ELF whose code and data sections hold a known payload.

# In[2]:

payload = bytes(range(256)) * 4
data = synth.build_container("elf", payload)
len(data)


# The parser finds the format on its own and returns an inventory of sections.

# In[3]:

pb = parse(data)
print(pb.format, pb.total_size)
for s in pb.sections:
    print(f"{s.name:12s} {s.kind.value:8s} offset={s.file_offset:5d} size={s.size}")


# Flattening keeps the section bytes in a fixed order, so the payload survives intact.

# In[4]:

stream = flatten(pb)
payload[:512] in stream, payload[512:] in stream


# ## Bytes to pixels
#
# The default width is near-square. A stream whose length is not a multiple of 3
# gets zero bytes to finish the last pixel, and the last row is zero-filled too.

# In[5]:

grid = codec.bytes_to_grid(stream)
print(grid.height, grid.width, grid.original_length, grid.tail_pad)


# The per-channel mean and sample standard deviation are handy summary features.

# In[6]:

st = codec.compute_stats(grid)
print("mu   ", np.round(st.mu, 2))
print("sigma", np.round(st.sigma, 2))


# ## Saving the picture
#
# Both encoders are lossless. BMP rows are stored bottom-up and padded to four
# bytes, so a 17 pixel row takes 52 bytes on disk.

# In[7]:

bmp = codec.write_bmp24(grid)
png = codec.write_png(grid)
print(len(bmp), len(png), codec.row_stride_24bpp(17))


# In[8]:

back = codec.read_png(png)
np.array_equal(back.pixels, grid.pixels), codec.grid_to_bytes(grid) == stream


# ## Broken files
#
# Truncated or lying headers produce a structured error instead of a crash.

# In[9]:

for bad in (data[:40], b"MZ" + b"\xff" * 60, b"\xca\xfe\xba\xbe" + b"\x00" * 4):
    try:
        parse(bad)
    except MalformedContainer as e:
        print(type(e).__name__, e)
