"""Utility functions for snapshots: range handling and PGM images."""

from __future__ import division
import numpy as np

PGM_MAXVAL = 65535


def truncate_range(data, percMin=0.25, percMax=99.75, discard_zeros=True):
    """Truncate too low and too high values.

    Parameters
    ----------
    data : np.ndarray
        Field or frame to be truncated. Not modified.
    percMin : float
        Percentile minimum.
    percMax : float
        Percentile maximum.
    discard_zeros : bool
        Discard cells with value 0 from the percentile estimate and keep
        them at 0 in the output.

    Returns
    -------
    data : np.ndarray, float
        Truncated copy.

    """
    data = np.array(data, dtype=float)
    if discard_zeros:
        msk = ~np.isclose(data, 0)
        if not np.any(msk):
            return data
        pMin, pMax = np.nanpercentile(data[msk], [percMin, percMax])
    else:
        msk = np.ones(data.shape, dtype=bool)
        pMin, pMax = np.nanpercentile(data, [percMin, percMax])
    data[msk] = np.clip(data[msk], pMin, pMax)
    return data


def scale_range(data, scale_factor=PGM_MAXVAL, delta=0, discard_zeros=True):
    """Scale values linearly onto ``[0, scale_factor - delta]``.

    Parameters
    ----------
    data : np.ndarray
        Field or frame to be scaled. Not modified.
    scale_factor : float
        Upper end of the output range (65535 for 16-bit graymaps).
    delta : float
        Keeps the maximum strictly below ``scale_factor`` when positive.
    discard_zeros : bool
        Leave cells with value 0 at 0.

    Returns
    -------
    data : np.ndarray, float
        Scaled copy. A constant input maps to all zeros.

    """
    data = np.array(data, dtype=float)
    if discard_zeros:
        msk = ~np.isclose(data, 0)
    else:
        msk = np.ones(data.shape, dtype=bool)
    if not np.any(msk):
        return np.zeros(data.shape)
    scale_factor = scale_factor - delta
    data[msk] = data[msk] - np.nanmin(data[msk])
    top = np.nanmax(data[msk])
    if top > 0:
        data[msk] = scale_factor / top * data[msk]
    if discard_zeros:
        data[~msk] = 0  # put back masked out cells
    return data


def to_graymap(data, truncate=False):
    """Map a 2D array to uint16 gray levels (0..65535)."""
    data = np.asarray(data, dtype=float)
    if truncate:
        data = truncate_range(data, discard_zeros=False)
    scaled = scale_range(data, scale_factor=PGM_MAXVAL, discard_zeros=False)
    return np.round(np.nan_to_num(scaled)).astype(np.uint16)


def pgm_bytes(gray, comment=None):
    """Encode a 2D uint16 array as a binary 16-bit PGM (P5).

    Parameters
    ----------
    gray : 2d numpy array, shape [height, width], uint16
    comment : str or None
        Optional single-line comment placed in the header.

    Returns
    -------
    data : bytes
        Header followed by big-endian samples, row-major.

    """
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise ValueError('PGM needs a 2D array, got shape %r' % (gray.shape,))
    height, width = gray.shape
    header = 'P5\n'
    if comment:
        header += '# %s\n' % comment.replace('\n', ' ')
    header += '%d %d\n%d\n' % (width, height, PGM_MAXVAL)
    body = np.clip(gray, 0, PGM_MAXVAL).astype('>u2').tobytes()
    return header.encode('ascii') + body


def read_pgm(data):
    """Decode bytes written by :func:`pgm_bytes` back to uint16 samples."""
    fields = []
    pos = 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b'#':
            pos = data.index(b'\n', pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    pos += 1  # single whitespace before the raster
    if fields[0] != b'P5':
        raise ValueError('not a binary graymap')
    width, height, maxval = (int(f) for f in fields[1:])
    dtype = '>u2' if maxval > 255 else 'u1'
    raster = np.frombuffer(data, dtype=dtype, count=width * height,
                           offset=pos)
    return raster.reshape(height, width).astype(np.uint16)


def mark_points(gray, points, radius=2, level=PGM_MAXVAL):
    """Draw small crosses at ``points`` (x, y) onto a copy of ``gray``."""
    out = np.array(gray, copy=True)
    height, width = out.shape
    for x, y in points:
        cx, cy = int(round(x)), int(round(y))
        for d in range(-radius, radius + 1):
            if 0 <= cy < height and 0 <= cx + d < width:
                out[cy, cx + d] = level
            if 0 <= cx < width and 0 <= cy + d < height:
                out[cy + d, cx] = level
    return out
