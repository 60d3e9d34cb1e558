"""Single-file dataset containers.

Both formats hold a JSON header (PDE, parameters, grids, noise metadata, seed,
sampling) followed by the flat field array and round-trip bit-exactly:

* CSV: first line ``# <header json>``, then one ``u`` column written with 17
  significant digits;
* binary: magic bytes, little-endian uint64 header length, UTF-8 header,
  little-endian float64 field.
"""
import hashlib
import io
import json
import logging
import os
import struct

import numpy as np
import pandas as pd

from pde_discovery.exceptions import ValidationError
from pde_discovery.synthetic.experiment import Experiment

logger = logging.getLogger(__name__)

MAGIC = b'PDEDSET1'
FORMATS = {'csv': '.csv', 'binary': '.pdd'}


def dataset_format(path):
    return 'binary' if str(path).endswith(FORMATS['binary']) else 'csv'


def write_dataset(experiment, path, fmt=None):
    fmt = fmt or dataset_format(path)
    header = json.dumps(experiment.header(), sort_keys=True)
    flat = np.ascontiguousarray(experiment.u.ravel(), dtype='<f8')
    if fmt == 'binary':
        encoded = header.encode('utf-8')
        with open(path, 'wb') as f:
            f.write(MAGIC)
            f.write(struct.pack('<Q', len(encoded)))
            f.write(encoded)
            f.write(flat.tobytes())
    elif fmt == 'csv':
        with open(path, 'w', newline='') as f:
            f.write('# %s\n' % header)
            pd.DataFrame({'u': flat}).to_csv(f, index=False, float_format='%.17g')
    else:
        raise ValidationError('Unknown dataset format %s' % fmt, path=path)
    logger.debug('Wrote %s dataset %s', fmt, path)
    return path


def read_dataset(path):
    fmt = dataset_format(path)
    try:
        if fmt == 'binary':
            with open(path, 'rb') as f:
                content = f.read()
            if content[:len(MAGIC)] != MAGIC:
                raise ValidationError('Not a binary dataset container', path=path)
            offset = len(MAGIC)
            length, = struct.unpack('<Q', content[offset:offset + 8])
            header = json.loads(content[offset + 8:offset + 8 + length].decode('utf-8'))
            flat = np.frombuffer(content[offset + 8 + length:], dtype='<f8').astype(np.float64)
        else:
            with open(path, 'r') as f:
                first = f.readline()
                if not first.startswith('# '):
                    raise ValidationError('Missing dataset header', line=1, path=path)
                header = json.loads(first[2:])
                frame = pd.read_csv(io.StringIO(f.read()), float_precision='round_trip')
            flat = frame['u'].to_numpy(dtype=np.float64)
        return Experiment.from_header(header, flat).validate()
    except (ValueError, KeyError, struct.error) as e:
        raise ValidationError('Corrupt dataset: %s' % e, path=path)


def checksum(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 16), b''):
            digest.update(block)
    return digest.hexdigest()


def dataset_path(directory, name, fmt='csv'):
    return os.path.join(directory, name + FORMATS[fmt])
