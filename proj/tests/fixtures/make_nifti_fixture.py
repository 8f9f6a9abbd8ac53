"""Regenerates nibabel_4x4x4.nii and its expected voxel list.

The expected values are what nibabel itself reports for the written file, in
x-fastest order, so the reader is compared against an independent tool.
"""
import pathlib

import nibabel as nib
import numpy as np

here = pathlib.Path(__file__).parent
data = (np.arange(64, dtype=np.float32).reshape(4, 4, 4, order="F") * np.float32(0.37) - np.float32(5.5))
data[1, 2, 3] = np.float32(-0.0)
data[3, 0, 1] = np.float32(1e-30)
affine = np.diag([1.5, 2.0, 2.5, 1.0])
affine[:3, 3] = [-10.0, 4.0, 7.25]
img = nib.Nifti1Image(data, affine)
img.header.set_xyzt_units("mm")
nib.save(img, here / "nibabel_4x4x4.nii")

back = nib.load(here / "nibabel_4x4x4.nii")
values = np.asarray(back.dataobj, dtype=np.float32).ravel(order="F")
with open(here / "nibabel_4x4x4.expected", "w") as f:
    f.write("# dims 4 4 4, spacing 1.5 2 2.5, origin -10 4 7.25; values as float32 bit patterns, x fastest\n")
    for v in values:
        f.write(f"{np.float32(v).view(np.uint32):08x}\n")
