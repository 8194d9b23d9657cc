from .container import (
    FORMAT_VERSION,
    MAGIC,
    atomic_write_bytes,
    atomic_write_text,
    decode_array,
    encode_array,
    read_container,
    write_container,
)

__all__ = [
    "FORMAT_VERSION",
    "MAGIC",
    "atomic_write_bytes",
    "atomic_write_text",
    "decode_array",
    "encode_array",
    "read_container",
    "write_container",
]
