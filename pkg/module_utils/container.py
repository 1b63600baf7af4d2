"""
Versioned flat file shared by serialized datasets and model files.

Layout::

    SKDAN-CONTAINER\\n
    {"blocks": [{"name": ..., "shape": [...]}, ...], "format_version": 1, "kind": ..., "metadata": {...}}\\n
    <block values as little-endian float64, in header order>
"""
import json
import logging
from collections import OrderedDict

import numpy as np

from module_utils.common import SkdanDataError

logger = logging.getLogger(__name__)

MAGIC = b'SKDAN-CONTAINER\n'
FORMAT_VERSION = 1
FLOAT_DTYPE = np.dtype('<f8')


class ContainerKind:
    DATASET = 'dataset'
    MODEL = 'model'


def write_container(path, kind, metadata, blocks):
    """
    Writes named arrays and a JSON metadata header to `path`.

    :param kind: ContainerKind value stored in the header
    :param metadata: JSON-serializable dictionary
    :param blocks: ordered mapping of block name to array
    """
    header = {
        'format_version': FORMAT_VERSION,
        'kind': kind,
        'metadata': metadata,
        'blocks': [{'name': name, 'shape': list(np.shape(values))} for name, values in blocks.items()],
    }
    header_line = json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf-8')
    if b'\n' in header_line:
        raise SkdanDataError('Container header must fit on a single line.')

    with open(path, 'wb') as f:
        f.write(MAGIC)
        f.write(header_line)
        f.write(b'\n')
        for values in blocks.values():
            f.write(np.ascontiguousarray(values, dtype=FLOAT_DTYPE).tobytes())
    logger.debug('Wrote %s container with %d blocks to %s', kind, len(blocks), path)


def read_container(path, expected_kind=None):
    """
    Reads a container written by `write_container`.

    :return: tuple of (metadata dict, OrderedDict of name -> float64 array)
    """
    with open(path, 'rb') as f:
        payload = f.read()

    if not payload.startswith(MAGIC):
        raise SkdanDataError('%s is not a SKDAN container.' % path, obj=path)

    header_end = payload.find(b'\n', len(MAGIC))
    if header_end < 0:
        raise SkdanDataError('Container %s has no header line.' % path, obj=path)
    try:
        header = json.loads(payload[len(MAGIC):header_end].decode('utf-8'))
    except ValueError as e:
        raise SkdanDataError('Container %s has a malformed header: %s' % (path, e), obj=path)

    version = header.get('format_version')
    if version != FORMAT_VERSION:
        raise SkdanDataError('Unsupported container format version: %s.' % version, obj=version)
    if expected_kind is not None and header.get('kind') != expected_kind:
        raise SkdanDataError("Expected a '%s' container, got '%s'." % (expected_kind, header.get('kind')),
                             obj=header.get('kind'))

    blocks = OrderedDict()
    offset = header_end + 1
    for block in header['blocks']:
        shape = tuple(block['shape'])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + count * FLOAT_DTYPE.itemsize
        if end > len(payload):
            raise SkdanDataError("Container %s is truncated in block '%s'." % (path, block['name']), obj=path)
        blocks[block['name']] = np.frombuffer(payload[offset:end], dtype=FLOAT_DTYPE).reshape(shape).astype(np.float64)
        offset = end

    if offset != len(payload):
        raise SkdanDataError('Container %s has %d trailing bytes.' % (path, len(payload) - offset), obj=path)
    return header.get('metadata', {}), blocks
