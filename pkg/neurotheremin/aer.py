"""Address-event transport with two wire profiles.

RAW
    Headerless little-endian 32-bit words, ``address`` in bits 0-23 and a
    signed 8-bit value in bits 24-31. For very local, in-order links.

SAFE
    Framed batches: ``magic u16 | version u8 | flags u8 | seq u32 |
    timestamp u64 | count u16`` followed by ``count`` records of
    ``address u32 | value i16 | dt u16`` and a CRC-32 trailer over
    everything before it. All fields little-endian.

The value quantum of either profile is link metadata and never travels on
the wire.
"""

from __future__ import annotations, division

import collections
import logging
import struct
import zlib
from dataclasses import dataclass, replace
from typing import NamedTuple, Tuple

import numpy as np

from neurotheremin.errors import (CodecError, ConfigError, FrameFault,
                                  SafeFrameError)
from neurotheremin.sigma_delta import GradedSpike

logger = logging.getLogger(__name__)

RAW_ADDRESS_BITS = 24
RAW_MAX_ADDRESS = (1 << RAW_ADDRESS_BITS) - 1
RAW_WORD_SIZE = 4

SAFE_MAGIC = 0xAE52
SAFE_VERSION = 1
SAFE_SCALE = 1.0 / 16
FLAG_PAYLOAD = 0x01
SAFE_HEADER = struct.Struct('<HBBIQH')
SAFE_CRC = struct.Struct('<I')
SAFE_RECORD = np.dtype([('address', '<u4'), ('value', '<i2'), ('dt', '<u2')])
SAFE_OVERHEAD = SAFE_HEADER.size + SAFE_CRC.size
SAFE_MAX_COUNT = 0xFFFF
SEQ_MODULO = 1 << 32

PROFILES = ('raw', 'safe')


def crc32(data):
    """CRC-32 (IEEE 802.3, reflected, init and final XOR 0xFFFFFFFF)."""
    return zlib.crc32(bytes(data)) & 0xFFFFFFFF


def event_address(x, y, width):
    """Row-major address of pixel ``(x, y)``."""
    return int(y) * int(width) + int(x)


def _quantize(values, scale, lo, hi, profile):
    q = np.rint(np.asarray(values, dtype=float) / scale)
    saturated = (q < lo) | (q > hi)
    if np.any(saturated):
        logger.warning('%s link saturated %d of %d values (scale %g)',
                       profile, int(saturated.sum()), q.size, scale)
    return np.clip(q, lo, hi).astype(np.int64)


# ---------------------------------------------------------------------------
# RAW profile

def raw_encode_arrays(addresses, values, scale=1.0):
    """Pack address and value arrays into RAW words.

    Parameters
    ----------
    addresses : 1d array of int
        Must be below ``2**24``.
    values : 1d array of float
        Quantized to ``round(value / scale)`` and saturated to int8.
    scale : float
        Value quantum of the link.

    Returns
    -------
    data : bytes
        Exactly four bytes per spike.

    """
    addresses = np.asarray(addresses, dtype=np.int64)
    if addresses.shape != np.shape(values):
        raise CodecError('addresses and values differ in length')
    if addresses.size and (addresses.min() < 0
                           or addresses.max() > RAW_MAX_ADDRESS):
        bad = int(np.flatnonzero((addresses < 0)
                                 | (addresses > RAW_MAX_ADDRESS))[0])
        raise CodecError('spike #%d: address %d does not fit 24 bits'
                         % (bad, addresses[bad]))
    q = _quantize(values, scale, -128, 127, 'raw')
    if np.any(q == 0):
        bad = int(np.flatnonzero(q == 0)[0])
        raise CodecError('spike #%d: zero value is not transmitted' % bad)
    words = (addresses & RAW_MAX_ADDRESS) | ((q & 0xFF) << RAW_ADDRESS_BITS)
    return words.astype('<u4').tobytes()


def raw_encode(spikes, scale=1.0):
    """RAW words for a sequence of ``(address, value)`` spikes."""
    spikes = list(spikes)
    addresses = np.array([s[0] for s in spikes], dtype=np.int64)
    values = np.array([s[1] for s in spikes], dtype=float)
    return raw_encode_arrays(addresses, values, scale)


def raw_decode_arrays(data, scale=1.0):
    """Inverse of :func:`raw_encode_arrays`; returns (addresses, values)."""
    if len(data) % RAW_WORD_SIZE:
        raise CodecError('RAW stream of %d bytes is not whole words'
                         % len(data))
    words = np.frombuffer(bytes(data), dtype='<u4').astype(np.int64)
    addresses = words & RAW_MAX_ADDRESS
    q = (words >> RAW_ADDRESS_BITS).astype(np.uint8).view(np.int8)
    if np.any(q == 0):
        raise CodecError('RAW word #%d carries a zero value'
                         % int(np.flatnonzero(q == 0)[0]))
    return addresses, q.astype(float) * scale


def raw_decode(data, scale=1.0):
    addresses, values = raw_decode_arrays(data, scale)
    return [GradedSpike(int(a), float(v)) for a, v in zip(addresses, values)]


# ---------------------------------------------------------------------------
# SAFE profile

class TimedSpike(NamedTuple):
    """Graded spike with a microsecond offset from its frame timestamp."""

    address: int
    value: float
    dt: int = 0


@dataclass(frozen=True)
class SafeFrame:
    seq: int
    timestamp: int
    spikes: Tuple[TimedSpike, ...] = ()
    flags: int = 0

    @property
    def count(self):
        return len(self.spikes)

    def events(self):
        """``(t, address, value)`` with absolute times."""
        return [(self.timestamp + s.dt, s.address, s.value)
                for s in self.spikes]


def safe_frame_size(count):
    """Encoded size of a frame with ``count`` records."""
    return SAFE_OVERHEAD + SAFE_RECORD.itemsize * int(count)


def safe_overhead(count):
    """Bytes per event of a frame with ``count`` records."""
    if count < 1:
        raise ValueError('overhead per event needs at least one event')
    return safe_frame_size(count) / count


def safe_encode(spikes, seq, timestamp, scale=SAFE_SCALE):
    """Encode one SAFE frame.

    Parameters
    ----------
    spikes : sequence of TimedSpike or (address, value, dt)
        Offsets must be non-decreasing and fit 16 bits.
    seq : int
        Sequence number, taken modulo ``2**32``.
    timestamp : int
        Frame time in microseconds since the stream epoch.
    scale : float
        Value quantum; values saturate to int16.

    Returns
    -------
    data : bytes

    """
    spikes = [TimedSpike(*s) for s in spikes]
    count = len(spikes)
    if count > SAFE_MAX_COUNT:
        raise CodecError('%d records exceed the frame limit of %d'
                         % (count, SAFE_MAX_COUNT))
    if not 0 <= int(timestamp) < 1 << 64:
        raise CodecError('timestamp %r does not fit 64 bits' % timestamp)
    records = np.zeros(count, dtype=SAFE_RECORD)
    if count:
        addresses = np.array([s.address for s in spikes], dtype=np.int64)
        dts = np.array([s.dt for s in spikes], dtype=np.int64)
        if addresses.min() < 0 or addresses.max() >= 1 << 32:
            raise CodecError('record address does not fit 32 bits')
        if dts.min() < 0 or dts.max() > 0xFFFF:
            raise CodecError('record offset does not fit 16 bits')
        if np.any(np.diff(dts) < 0):
            raise CodecError('record offsets must be non-decreasing')
        records['address'] = addresses
        records['value'] = _quantize([s.value for s in spikes], scale,
                                     -32768, 32767, 'safe')
        records['dt'] = dts
    flags = FLAG_PAYLOAD if count else 0
    body = SAFE_HEADER.pack(SAFE_MAGIC, SAFE_VERSION, flags,
                            int(seq) % SEQ_MODULO, int(timestamp),
                            count) + records.tobytes()
    return body + SAFE_CRC.pack(crc32(body))


def safe_decode(data, scale=SAFE_SCALE):
    """Validate and decode one SAFE frame.

    Checks run in order: minimum length, magic, version, declared length,
    CRC, then the record invariants.

    Raises
    ------
    SafeFrameError
        With ``fault`` set to the first failed check.
    CodecError
        For CRC-valid frames that break the record invariants.

    """
    data = bytes(data)
    if len(data) < SAFE_OVERHEAD:
        raise SafeFrameError(FrameFault.TRUNCATED,
                             '%d bytes, header needs %d'
                             % (len(data), SAFE_OVERHEAD))
    magic, version, flags, seq, timestamp, count = \
        SAFE_HEADER.unpack_from(data)
    if magic != SAFE_MAGIC:
        raise SafeFrameError(FrameFault.BAD_MAGIC, '0x%04x' % magic)
    if version != SAFE_VERSION:
        raise SafeFrameError(FrameFault.BAD_VERSION, str(version))
    expected = safe_frame_size(count)
    if len(data) < expected:
        raise SafeFrameError(FrameFault.TRUNCATED, '%d of %d bytes'
                             % (len(data), expected))
    if len(data) > expected:
        raise SafeFrameError(FrameFault.LENGTH_MISMATCH,
                             '%d bytes for %d records' % (len(data), count))
    body = data[:-SAFE_CRC.size]
    stored, = SAFE_CRC.unpack_from(data, len(body))
    if crc32(body) != stored:
        raise SafeFrameError(FrameFault.BAD_CRC, 'stored 0x%08x, computed '
                             '0x%08x' % (stored, crc32(body)))
    if flags != (FLAG_PAYLOAD if count else 0):
        raise CodecError('flags 0x%02x do not match %d records'
                         % (flags, count))
    records = np.frombuffer(body[SAFE_HEADER.size:], dtype=SAFE_RECORD)
    if np.any(np.diff(records['dt'].astype(np.int64)) < 0):
        raise CodecError('record offsets decrease in frame %d' % seq)
    spikes = tuple(TimedSpike(int(r['address']), float(r['value']) * scale,
                              int(r['dt'])) for r in records)
    return SafeFrame(seq, timestamp, spikes, flags)


def hexdump(data, width=16):
    """Offset, hex and printable columns, ``width`` bytes per line."""
    data = bytes(data)
    lines = []
    for off in range(0, len(data), width):
        chunk = data[off:off + width]
        text = ''.join(chr(b) if 32 <= b < 127 else '.' for b in chunk)
        lines.append('%08x  %-*s  %s' % (off, 3 * width - 1,
                                          chunk.hex(' '), text))
    return '\n'.join(lines)


def describe_frame(data, scale=SAFE_SCALE):
    """Annotated hex of a SAFE frame, one line per field or record."""
    data = bytes(data)
    try:
        frame = safe_decode(data, scale)
    except CodecError as err:
        return 'undecodable frame (%s)\n%s' % (err, hexdump(data))
    names = ('magic', 'version', 'flags', 'seq', 'timestamp', 'count')
    sizes = (2, 1, 1, 4, 8, 2)
    lines = []
    off = 0
    for name, size, value in zip(names, sizes,
                                 SAFE_HEADER.unpack_from(data)):
        lines.append('%04x  %-23s  %s=%d' % (off, data[off:off + size].hex(' '),
                                             name, value))
        off += size
    for i, s in enumerate(frame.spikes):
        raw = data[off:off + SAFE_RECORD.itemsize]
        lines.append('%04x  %-23s  record[%d] address=%d value=%g dt=%d'
                     % (off, raw.hex(' '), i, s.address, s.value, s.dt))
        off += SAFE_RECORD.itemsize
    lines.append('%04x  %-23s  crc=0x%08x' % (off, data[off:].hex(' '),
                                              crc32(data[:off])))
    return '\n'.join(lines)


def single_bit_fuzz(data, scale=SAFE_SCALE):
    """Decode every single-bit corruption of a valid frame.

    Returns
    -------
    outcomes : collections.Counter
        Keys are fault names, ``'codec'`` for invariant failures and
        ``'accepted'`` for corruptions that decoded without error.

    """
    data = bytearray(data)
    outcomes = collections.Counter()
    for index in range(len(data)):
        for bit in range(8):
            data[index] ^= 1 << bit
            try:
                safe_decode(data, scale)
            except SafeFrameError as err:
                outcomes[err.fault.value] += 1
            except CodecError:
                outcomes['codec'] += 1
            else:
                outcomes['accepted'] += 1
            data[index] ^= 1 << bit
    return outcomes


# ---------------------------------------------------------------------------
# Senders and link accounting

@dataclass
class LinkStats:
    """Link counters. ``overhead`` is wire bytes per event."""

    sent: int = 0
    delivered: int = 0
    lost: int = 0
    corrupted_dropped: int = 0
    duplicate_dropped: int = 0
    reordered: int = 0
    bytes_sent: int = 0
    events_sent: int = 0

    @property
    def overhead(self):
        if self.events_sent == 0:
            return 0.0
        return self.bytes_sent / self.events_sent

    def snapshot(self):
        return replace(self)

    def merge_sender(self, other):
        """Copy of ``self`` with the send side counters of ``other``."""
        return replace(self, sent=other.sent, bytes_sent=other.bytes_sent,
                       events_sent=other.events_sent)


class SafeSender:
    """Batches timed spikes into sequenced SAFE frames.

    Parameters
    ----------
    frame_us : int
        Time span covered by one frame.
    scale : float
        Value quantum of the link.
    heartbeat : bool
        Emit empty frames for windows without spikes.

    """

    def __init__(self, frame_us=1000, scale=SAFE_SCALE, heartbeat=False,
                 first_seq=0):
        if frame_us < 1 or frame_us > 0xFFFF + 1:
            raise ConfigError('frame_us must lie in [1, 65536]')
        self.frame_us = int(frame_us)
        self.scale = scale
        self.heartbeat = heartbeat
        self.seq = int(first_seq)
        self.stats = LinkStats()

    def encode_batch(self, spikes, timestamp):
        data = safe_encode(spikes, self.seq, timestamp, self.scale)
        self.seq = (self.seq + 1) % SEQ_MODULO
        self.stats.sent += 1
        self.stats.bytes_sent += len(data)
        self.stats.events_sent += len(spikes)
        return data

    def send_stream(self, times, addresses, values, t_start, t_end):
        """Frames covering ``[t_start, t_end)`` in steps of ``frame_us``.

        Returns
        -------
        list of (timestamp, bytes)

        """
        times = np.asarray(times, dtype=np.int64)
        addresses = np.asarray(addresses, dtype=np.int64)
        values = np.asarray(values, dtype=float)
        order = np.argsort(times, kind='stable')
        times, addresses, values = times[order], addresses[order], \
            values[order]
        frames = []
        for t0 in range(int(t_start), int(t_end), self.frame_us):
            lo, hi = np.searchsorted(times, [t0, t0 + self.frame_us])
            if lo == hi and not self.heartbeat:
                continue
            for start in range(lo, max(hi, lo + 1), SAFE_MAX_COUNT):
                stop = min(start + SAFE_MAX_COUNT, hi)
                batch = [TimedSpike(int(a), float(v), int(t - t0))
                         for t, a, v in zip(times[start:stop],
                                            addresses[start:stop],
                                            values[start:stop])]
                frames.append((t0, self.encode_batch(batch, t0)))
        return frames


def raw_link(addresses, values, scale=1.0):
    """RAW bytes plus the send side counters (one unit per word)."""
    data = raw_encode_arrays(addresses, values, scale)
    n = len(data) // RAW_WORD_SIZE
    return data, LinkStats(sent=n, bytes_sent=len(data), events_sent=n)


# ---------------------------------------------------------------------------
# Channel simulator

@dataclass(frozen=True)
class ChannelConfig:
    """Seeded lossy channel.

    Draw order per transmission: loss for every unit, bit flips for the
    kept units, delays, then the reorder keys.
    """

    loss_p: float = 0.0
    bitflip_p: float = 0.0
    delay_base: float = 0.0
    delay_jitter: float = 0.0
    reorder_window: int = 0
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.loss_p <= 1 and 0 <= self.bitflip_p <= 1):
            raise ConfigError('channel probabilities must lie in [0, 1]')
        if self.delay_base < 0 or self.delay_jitter < 0:
            raise ConfigError('channel delays must be non-negative')
        if self.reorder_window < 0:
            raise ConfigError('reorder_window must be non-negative')

    @property
    def lossless(self):
        return (self.loss_p == 0 and self.bitflip_p == 0
                and self.reorder_window == 0)


class Delivery(NamedTuple):
    index: int
    t: float
    data: bytes


def channel_transmit(units, config, send_times=None, profile='safe'):
    """Pass byte units through the simulated channel.

    Parameters
    ----------
    units : sequence of bytes
        RAW words or SAFE frames, in send order.
    config : ChannelConfig
    send_times : sequence of float or None
        Send time per unit in microseconds, zeros by default.
    profile : {'raw', 'safe'}
        RAW links refuse reordering.

    Returns
    -------
    deliveries : list of Delivery
        In delivery order, each unit at most ``reorder_window`` places from
        its send position. ``t`` is the send time plus
        ``delay_base + delay_jitter * U[0, 1)``; with jitter the times need
        not increase along the list.

    """
    if profile not in PROFILES:
        raise ConfigError('unknown profile %r' % profile)
    if profile == 'raw' and config.reorder_window:
        raise ConfigError('RAW links are in-order only, reorder_window must '
                          'be 0')
    units = [bytes(u) for u in units]
    n = len(units)
    send = np.zeros(n) if send_times is None \
        else np.asarray(send_times, dtype=float)
    rng = np.random.default_rng(config.seed)

    kept = np.flatnonzero(rng.random(n) >= config.loss_p)
    payloads = []
    flipped = 0
    for i in kept:
        data = units[i]
        hits = np.flatnonzero(rng.random(len(data)) < config.bitflip_p)
        if hits.size:
            buf = bytearray(data)
            bits = rng.integers(0, 8, size=hits.size)
            for pos, bit in zip(hits, bits):
                buf[pos] ^= 1 << int(bit)
            data = bytes(buf)
            flipped += 1
        payloads.append(data)
    arrival = send[kept] + config.delay_base \
        + config.delay_jitter * rng.random(kept.size)
    keys = np.arange(kept.size, dtype=float)
    if config.reorder_window:
        keys = keys + config.reorder_window * rng.random(kept.size)
    order = np.argsort(keys, kind='stable')
    logger.debug('channel: %d sent, %d lost, %d corrupted', n,
                 n - kept.size, flipped)
    return [Delivery(int(kept[j]), float(arrival[j]), payloads[j])
            for j in order]


class LoopbackPipe:
    """In-process byte pipe between a sender and a receiver.

    Units written are read back whole and in order; ``capacity`` bounds the
    number of queued units.
    """

    def __init__(self, capacity=None):
        self._queue = collections.deque()
        self.capacity = capacity
        self.closed = False

    def write(self, data):
        if self.closed:
            raise BrokenPipeError('write to a closed pipe')
        if self.capacity is not None and len(self._queue) >= self.capacity:
            raise BufferError('pipe full (%d units)' % self.capacity)
        self._queue.append(bytes(data))

    def read(self):
        """Next unit, or None when the pipe is empty."""
        return self._queue.popleft() if self._queue else None

    def drain(self):
        units = list(self._queue)
        self._queue.clear()
        return units

    def close(self):
        self.closed = True

    def __len__(self):
        return len(self._queue)


# ---------------------------------------------------------------------------
# Receiver

class ReceivedSpike(NamedTuple):
    t: int
    address: int
    value: float


def _ahead(seq, ref):
    """Signed distance from ``ref`` to ``seq`` in wrapping sequence space."""
    d = (seq - ref) % SEQ_MODULO
    return d - SEQ_MODULO if d >= SEQ_MODULO // 2 else d


class Receiver:
    """Re-sequences SAFE frames and accounts for link anomalies.

    Frames are held until the next expected sequence number arrives or the
    newest held frame is ``reorder_window`` ahead of it; then the gap is
    counted as lost. Gaps matched by frames that failed to decode are not
    counted twice.

    Parameters
    ----------
    reorder_window : int
    scale : float
        Value quantum of the link.
    first_seq : int
        Sequence number of the first frame of the stream.

    """

    def __init__(self, reorder_window=8, scale=SAFE_SCALE, first_seq=0):
        if reorder_window < 1:
            raise ConfigError('reorder_window must be at least 1')
        self.reorder_window = int(reorder_window)
        self.scale = scale
        self.next_seq = int(first_seq) % SEQ_MODULO
        self.stats = LinkStats()
        self._pending = {}
        self._highest = None
        self._emitted = collections.deque(maxlen=64 * self.reorder_window)
        self._unexplained = 0

    def _count_gap(self, gap):
        explained = min(gap, self._unexplained)
        self._unexplained -= explained
        self.stats.lost += gap - explained
        if gap - explained:
            logger.debug('receiver: %d frames lost before seq %d',
                         gap - explained, (self.next_seq + gap) % SEQ_MODULO)

    def _flush(self, force=False):
        out = []
        while self._pending:
            if self.next_seq in self._pending:
                frame = self._pending.pop(self.next_seq)
                out.extend(ReceivedSpike(t, a, v) for t, a, v
                           in frame.events())
                self._emitted.append(frame.seq)
                self.stats.delivered += 1
                self.next_seq = (self.next_seq + 1) % SEQ_MODULO
                continue
            span = max(_ahead(s, self.next_seq) for s in self._pending)
            if not force and span < self.reorder_window:
                break
            first = min(self._pending, key=lambda s: _ahead(s,
                                                            self.next_seq))
            self._count_gap(_ahead(first, self.next_seq))
            self.next_seq = first
        return out

    def ingest_frame(self, frame):
        """Accept a decoded frame; returns the spikes released by it."""
        distance = _ahead(frame.seq, self.next_seq)
        if distance < 0:
            if frame.seq in self._emitted:
                self.stats.duplicate_dropped += 1
            else:
                logger.debug('receiver: seq %d arrived after its gap was '
                             'counted lost', frame.seq)
            return []
        if frame.seq in self._pending:
            self.stats.duplicate_dropped += 1
            return []
        if self._highest is not None and _ahead(frame.seq,
                                                self._highest) < 0:
            self.stats.reordered += 1
        else:
            self._highest = frame.seq
        self._pending[frame.seq] = frame
        return self._flush()

    def ingest_bytes(self, data):
        """Decode and accept one unit; failures count as corrupted."""
        try:
            frame = safe_decode(data, self.scale)
        except CodecError as err:
            self.stats.corrupted_dropped += 1
            self._unexplained += 1
            logger.debug('receiver: dropped corrupted frame (%s)', err)
            return []
        return self.ingest_frame(frame)

    def finish(self, end_seq=None):
        """Release everything held; ``end_seq`` is one past the last sent."""
        out = self._flush(force=True)
        if end_seq is not None:
            tail = _ahead(int(end_seq) % SEQ_MODULO, self.next_seq)
            if tail > 0:
                self._count_gap(tail)
                self.next_seq = int(end_seq) % SEQ_MODULO
        return out


def receiver_ingest(frames, reorder_window=8, end_seq=None, scale=SAFE_SCALE):
    """Run a fresh Receiver over decoded frames or raw units.

    Returns
    -------
    spikes : list of ReceivedSpike
        In sequence order, absolute times.
    stats : LinkStats

    """
    receiver = Receiver(reorder_window, scale)
    spikes = []
    for frame in frames:
        if isinstance(frame, SafeFrame):
            spikes.extend(receiver.ingest_frame(frame))
        else:
            spikes.extend(receiver.ingest_bytes(frame))
    spikes.extend(receiver.finish(end_seq))
    return spikes, receiver.stats.snapshot()
