"""Mine likely invariants from a contract's transaction traces and replay them as guards.

Pipeline: structLogs -> invocation tree -> bit-level taint and observations
-> invariant manifest -> verdicts, template combinations and a report.
"""
from .abi import AbiCatalog
from .checker import CombinationExpr, GuardState, Verdict, aggregate_report, check_tx, enumerate_combinations
from .config import TEMPLATES, AnalysisConfig
from .errors import (
    AbiMismatch, ConfigError, ConfigMissing, CorruptCache, EmptyCorpus, InvGuardError, MalformedTrace,
    ProviderUnavailable, StateCorrupt, TrackerDesync,
)
from .extraction import BalanceLedger, ObservationSet, analyze_transaction, extract
from .manifest import InvariantInstance, Manifest
from .pipeline import Pipeline, cmd_check, cmd_combine, cmd_infer, cmd_parse, cmd_report
from .storage import StorageLayout
from .synthesis import infer_bounds, synthesize
from .trace import StructLogEntry, TxMetadata, parse_struct_logs
from .tree import build_invocation_tree

__version__ = "0.1.0"
