from .container import (
    CompressedLayer,
    CompressedModel,
    compress_model,
    decompress_model,
    from_bytes,
    read_ecm,
    to_bytes,
    write_ecm,
)
from .pmd import (
    BitAccount,
    Bitstream,
    EmpiricalPMD,
    bit_account,
    decode,
    empirical_pmd,
    encode,
)
from .report import CompressionReport, compression_report

__all__ = [
    "BitAccount", "Bitstream", "CompressedLayer", "CompressedModel", "CompressionReport",
    "EmpiricalPMD", "bit_account", "compress_model", "compression_report", "decode",
    "decompress_model", "empirical_pmd", "encode", "from_bytes", "read_ecm", "to_bytes",
    "write_ecm",
]
