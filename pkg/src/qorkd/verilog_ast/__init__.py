from .errors import (
    LexError, SemanticError, UnsupportedConstructError, VerilogError, VerilogSyntaxError,
)
from .features import (
    BIT_CAP, FEATURE_DIM, encode_nodes, extract_features_108, init_projections, load_features,
    longest_path, node_classes, node_feature_encoder, save_features,
)
from .graph import OP_CODES, OP_NAMES, to_ast_graph
from .parser import parse, parse_modules
from .syntax import VerilogModule


def parse_to_graph(source: str, design_id: str, top: str | None = None):
    """Parse, lower, and featurize one source text: ``(module, graph, features)``."""
    m = parse(source, top)
    g = to_ast_graph(m, design_id)
    return m, g, extract_features_108(g, m)
