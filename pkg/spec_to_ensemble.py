"""
spec_to_ensemble.py

This module provides the translator from textual ensemble specs to
EnsembleSpec expression trees. Three input forms are accepted:

1.  **JSON**: {"type": "product", "a": {...}, "b": {...}} and friends; complex
    numbers are written [re, im].
2.  **S-expressions**: (product (shift 1 (gue)) (shift 1 (ginibre))),
    (elliptic :mu 0.5 :sigma 1), complex numbers written (re im) or as a bare
    real. A Lark parser builds the AST, which is walked into the same
    dictionary form as the JSON input.
3.  **Shorthands**: the bare names `gue` and `ginibre`, and `@path` to read
    any of the above from a file.

Every error is a SpecParseError carrying the path of the offending field,
e.g. `$.a.of.mu`.
"""

import json
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from lark import Lark, Token, Tree
from lark.exceptions import LarkError

from qf_errors import QFreeError, SpecParseError
from qf_ensembles import Elliptic, EnsembleSpec, Product, Scale, Shift, Sum
from qf_laws import EllipticLaw

spec_grammar = r"""
    ?start: sexpr
    ?sexpr: atom | list
    list: "(" sexpr* ")"
    ?atom: KEYWORD | SYMBOL | NUMBER
    KEYWORD: /:[a-zA-Z_][a-zA-Z0-9_]*/
    SYMBOL: /[a-zA-Z_][a-zA-Z0-9_]*/
    NUMBER: /[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?/
    %import common.WS
    %ignore WS
"""

SHORTHANDS = {'gue': {'type': 'gue'}, 'ginibre': {'type': 'ginibre'}}
ELLIPTIC_KEYS = ('mu', 'sigma', 'phi', 'x')


class SpecToEnsemble:
    """
    Translates an s-expression spec into the JSON-shaped dictionary form by
    walking the parsed tree, then builds the EnsembleSpec from it.
    """
    def __init__(self):
        """Initializes the translator with its parser."""
        self.parser = Lark(spec_grammar, start='start')

    def translate(self, text: str) -> EnsembleSpec:
        """
        The main public method to perform the translation.

        Args:
            text (str): A single s-expression.

        Returns:
            EnsembleSpec: The expression tree.
        """
        clean = text.strip()
        if not clean: raise SpecParseError("Empty spec.")
        try:
            tree = self.parser.parse(clean)
        except LarkError as exc:
            raise SpecParseError(f"Invalid s-expression: {exc}") from exc
        return spec_from_dict(self._visit(tree, '$'), '$')

    @staticmethod
    def _terminal(node, kind: str) -> Optional[str]:
        """
        Text of a KEYWORD, SYMBOL or NUMBER terminal. The grammar inlines
        atoms, so a list child is either such a token or a nested list.
        """
        if isinstance(node, Token) and node.type == kind: return node.value
        return None

    @staticmethod
    def _is_list(node) -> bool:
        """True for a parenthesized group; its children are the operator and arguments."""
        return isinstance(node, Tree) and node.data == 'list'

    def _visit(self, tree, path: str) -> Dict[str, Any]:
        """Dispatches an ensemble expression to its dictionary form."""
        if isinstance(tree, Token):
            if tree.value in SHORTHANDS: return dict(SHORTHANDS[tree.value])
            raise SpecParseError(f"Expected an ensemble expression, got '{tree.value}'.", path)
        if not self._is_list(tree) or not tree.children:
            raise SpecParseError("Expected a non-empty list expression.", path)
        return self._visit_list(tree, path)

    def _visit_number(self, tree, path: str) -> Union[float, List[float]]:
        """A bare real or a (re im) pair."""
        value = self._terminal(tree, 'NUMBER')
        if value is not None: return float(value)
        if self._is_list(tree) and len(tree.children) == 2:
            parts = [self._terminal(c, 'NUMBER') for c in tree.children]
            if None not in parts: return [float(parts[0]), float(parts[1])]
        raise SpecParseError("Expected a number or a (re im) pair.", path)

    def _visit_list(self, list_tree: Tree, path: str) -> Dict[str, Any]:
        """Handles a list expression like (operator ...args)."""
        operator = self._terminal(list_tree.children[0], 'SYMBOL')
        if operator is None: raise SpecParseError(f"Invalid operator: {list_tree.children[0]}.", path)
        args = list_tree.children[1:]

        if operator in ('gue', 'ginibre'):
            if args: raise SpecParseError(f"'{operator}' takes no arguments.", path)
            return {'type': operator}
        if operator == 'elliptic':
            return self._handle_elliptic(args, path)
        if operator in ('shift', 'scale'):
            if len(args) != 2: raise SpecParseError(f"'{operator}' expects two arguments.", path)
            key = 'x' if operator == 'shift' else 'alpha'
            return {'type': operator, key: self._visit_number(args[0], f"{path}.{key}"),
                    'of': self._visit(args[1], f"{path}.of")}
        if operator == 'sum':
            if not args: raise SpecParseError("'sum' expects at least one term.", path)
            return {'type': 'sum', 'terms': [self._visit(a, f"{path}.terms[{k}]") for k, a in enumerate(args)]}
        if operator == 'product':
            if len(args) != 2: raise SpecParseError("'product' expects exactly two factors.", path)
            return {'type': 'product', 'a': self._visit(args[0], f"{path}.a"), 'b': self._visit(args[1], f"{path}.b")}
        raise SpecParseError(f"Unknown ensemble type '{operator}'.", path)

    def _handle_elliptic(self, args: List, path: str) -> Dict[str, Any]:
        """Keyword arguments :mu :sigma :phi :x, in any order."""
        if len(args) % 2: raise SpecParseError("'elliptic' expects keyword/value pairs.", path)
        out: Dict[str, Any] = {'type': 'elliptic'}
        for key_tree, value_tree in zip(args[0::2], args[1::2]):
            key = self._terminal(key_tree, 'KEYWORD')
            if key is None: raise SpecParseError(f"Expected a keyword, got '{key_tree}'.", path)
            name = key[1:]
            if name not in ELLIPTIC_KEYS: raise SpecParseError(f"Unknown elliptic parameter ':{name}'.", path)
            out[name] = self._visit_number(value_tree, f"{path}.{name}")
        return out


# --- Dictionary Form ---

def _real(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SpecParseError(f"Expected a number, got {value!r}.", path)
    if not math.isfinite(value): raise SpecParseError(f"Expected a finite number, got {value!r}.", path)
    return float(value)


def _complex(value: Any, path: str) -> complex:
    if isinstance(value, (list, tuple)):
        if len(value) != 2: raise SpecParseError(f"Complex numbers are [re, im], got {value!r}.", path)
        return complex(_real(value[0], f"{path}[0]"), _real(value[1], f"{path}[1]"))
    return complex(_real(value, path), 0.0)


def _check_keys(obj: Dict[str, Any], allowed: tuple, path: str):
    extra = sorted(set(obj) - set(allowed) - {'type'})
    if extra: raise SpecParseError(f"Unknown key '{extra[0]}'.", f"{path}.{extra[0]}")


def _child(obj: Dict[str, Any], key: str, path: str) -> EnsembleSpec:
    if key not in obj: raise SpecParseError(f"Missing key '{key}'.", path)
    return spec_from_dict(obj[key], f"{path}.{key}")


def spec_from_dict(obj: Any, path: str = '$') -> EnsembleSpec:
    """Builds an EnsembleSpec from the JSON-shaped dictionary form."""
    if not isinstance(obj, dict): raise SpecParseError(f"Expected an object, got {type(obj).__name__}.", path)
    kind = obj.get('type')
    if kind in ('gue', 'ginibre'):
        _check_keys(obj, (), path)
        return Elliptic.gue() if kind == 'gue' else Elliptic.ginibre()
    if kind == 'elliptic':
        _check_keys(obj, ELLIPTIC_KEYS, path)
        mu = _real(obj.get('mu', 0.0), f"{path}.mu")
        sigma = _real(obj.get('sigma', 1.0), f"{path}.sigma")
        phi = _real(obj.get('phi', 0.0), f"{path}.phi")
        x = _complex(obj.get('x', [0.0, 0.0]), f"{path}.x")
        if abs(mu) > 1: raise SpecParseError(f"mu must lie in [-1, 1], got {mu}.", f"{path}.mu")
        if sigma <= 0: raise SpecParseError(f"sigma must be positive, got {sigma}.", f"{path}.sigma")
        return Elliptic(EllipticLaw(x, sigma, mu, phi))
    if kind == 'shift':
        _check_keys(obj, ('x', 'of'), path)
        if 'x' not in obj: raise SpecParseError("Missing key 'x'.", path)
        return Shift(_complex(obj['x'], f"{path}.x"), _child(obj, 'of', path))
    if kind == 'scale':
        _check_keys(obj, ('alpha', 'of'), path)
        if 'alpha' not in obj: raise SpecParseError("Missing key 'alpha'.", path)
        alpha = _complex(obj['alpha'], f"{path}.alpha")
        if alpha == 0: raise SpecParseError("alpha must be nonzero.", f"{path}.alpha")
        return Scale(alpha, _child(obj, 'of', path))
    if kind == 'sum':
        _check_keys(obj, ('terms',), path)
        terms = obj.get('terms')
        if not isinstance(terms, list) or not terms:
            raise SpecParseError("'terms' must be a non-empty list.", f"{path}.terms")
        return Sum(tuple(spec_from_dict(t, f"{path}.terms[{k}]") for k, t in enumerate(terms)))
    if kind == 'product':
        _check_keys(obj, ('a', 'b'), path)
        return Product(_child(obj, 'a', path), _child(obj, 'b', path))
    raise SpecParseError(f"Unknown ensemble type {kind!r}.", f"{path}.type")


def parse_spec(text: str) -> EnsembleSpec:
    """
    Parses a spec given as JSON, as an s-expression, as a named shorthand, or
    as `@path` naming a file that holds one of those.

    Raises:
        SpecParseError: With the path of the offending field.
        OSError: When an `@path` file cannot be read.
    """
    clean = text.strip()
    if clean.startswith('@'):
        clean = Path(clean[1:]).read_text(encoding='utf-8').strip()
    if clean in SHORTHANDS: return spec_from_dict(SHORTHANDS[clean])
    try:
        if clean.startswith('{'):
            try:
                obj = json.loads(clean)
            except json.JSONDecodeError as exc:
                raise SpecParseError(f"Invalid JSON: {exc.msg} at line {exc.lineno} column {exc.colno}.") from exc
            return spec_from_dict(obj)
        if clean.startswith('('): return SpecToEnsemble().translate(clean)
    except SpecParseError:
        raise
    except QFreeError as exc:
        raise SpecParseError(str(exc)) from exc
    raise SpecParseError(f"Unrecognized spec '{clean[:40]}'; expected JSON, an s-expression or a shorthand.")
