"""Virtual database middleware: registry, broker, and heterogeneous SQL
services speaking one envelope RPC protocol."""

from .broker import Broker, QueryOptions, QueryOutcome
from .dbs import DbsConfig, DbsService
from .monitor import Monitor, MonitorConfig, select_optimal
from .registry import FindQuery, Registry, ServiceDescriptor
from .sql import CanonicalQuery, parse_query, translate
from .tables import ResultSet, execute_canonical, load_table
from .transport import RpcServer, invoke
from .wire import Endpoint, Fault, FaultError, MethodCall, MethodResult

__version__ = "0.1.0"

__all__ = [
    "Broker",
    "CanonicalQuery",
    "DbsConfig",
    "DbsService",
    "Endpoint",
    "Fault",
    "FaultError",
    "FindQuery",
    "MethodCall",
    "MethodResult",
    "Monitor",
    "MonitorConfig",
    "QueryOptions",
    "QueryOutcome",
    "Registry",
    "ResultSet",
    "RpcServer",
    "ServiceDescriptor",
    "execute_canonical",
    "invoke",
    "load_table",
    "parse_query",
    "select_optimal",
    "translate",
    "__version__",
]
