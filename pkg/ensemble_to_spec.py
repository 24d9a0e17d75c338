"""
ensemble_to_spec.py

This module provides the translator from an EnsembleSpec expression tree back
to its textual forms: the JSON schema and the s-expression syntax. Numbers use
the shortest round-trip representation, so parsing the output rebuilds an
equal tree. The standard GUE and Ginibre leaves are written by name.
"""

import json
from typing import Any, Dict, List, Union

from qf_ensembles import Elliptic, EnsembleSpec, Product, Scale, Shift, Sum
from qf_laws import EllipticLaw


class EnsembleToSpec:
    """
    Translates an EnsembleSpec into JSON or s-expression text by recursively
    visiting the tree.
    """
    def __init__(self, spec: EnsembleSpec):
        """
        Initializes the translator.

        Args:
            spec (EnsembleSpec): The expression tree to be translated.
        """
        self.spec = spec

    def to_dict(self) -> Dict[str, Any]:
        """The JSON-shaped dictionary form."""
        return self._visit_dict(self.spec)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)

    def to_sexpr(self) -> str:
        return self._visit_sexpr(self.spec)

    @staticmethod
    def _leaf_name(law: EllipticLaw) -> Union[str, None]:
        if law == EllipticLaw.gue(): return 'gue'
        if law == EllipticLaw.ginibre(): return 'ginibre'
        return None

    @staticmethod
    def _pair(value: complex) -> List[float]:
        return [float(value.real), float(value.imag)]

    @staticmethod
    def _number(value: Union[float, complex]) -> str:
        value = complex(value)
        if value.imag == 0: return repr(float(value.real))
        return f"({float(value.real)!r} {float(value.imag)!r})"

    def _visit_dict(self, node: EnsembleSpec) -> Dict[str, Any]:
        """Dispatches to the dictionary form of each node type."""
        if isinstance(node, Elliptic):
            name = self._leaf_name(node.law)
            if name: return {'type': name}
            law = node.law
            return {'type': 'elliptic', 'mu': law.mu, 'sigma': law.sigma, 'phi': law.phi, 'x': self._pair(law.x)}
        if isinstance(node, Shift):
            return {'type': 'shift', 'x': self._pair(node.x), 'of': self._visit_dict(node.of)}
        if isinstance(node, Scale):
            return {'type': 'scale', 'alpha': self._pair(node.alpha), 'of': self._visit_dict(node.of)}
        if isinstance(node, Sum):
            return {'type': 'sum', 'terms': [self._visit_dict(t) for t in node.terms]}
        if isinstance(node, Product):
            return {'type': 'product', 'a': self._visit_dict(node.a), 'b': self._visit_dict(node.b)}
        raise TypeError(f"Unknown ensemble node {type(node).__name__}.")

    def _visit_sexpr(self, node: EnsembleSpec) -> str:
        """Dispatches to the s-expression form of each node type."""
        if isinstance(node, Elliptic):
            name = self._leaf_name(node.law)
            if name: return f"({name})"
            law = node.law
            return (f"(elliptic :mu {self._number(law.mu)} :sigma {self._number(law.sigma)} "
                    f":phi {self._number(law.phi)} :x {self._number(law.x)})")
        if isinstance(node, Shift):
            return f"(shift {self._number(node.x)} {self._visit_sexpr(node.of)})"
        if isinstance(node, Scale):
            return f"(scale {self._number(node.alpha)} {self._visit_sexpr(node.of)})"
        if isinstance(node, Sum):
            return f"(sum {' '.join(self._visit_sexpr(t) for t in node.terms)})"
        if isinstance(node, Product):
            return f"(product {self._visit_sexpr(node.a)} {self._visit_sexpr(node.b)})"
        raise TypeError(f"Unknown ensemble node {type(node).__name__}.")


def ensemble_to_json(spec: EnsembleSpec) -> str:
    return EnsembleToSpec(spec).to_json()


def ensemble_to_sexpr(spec: EnsembleSpec) -> str:
    return EnsembleToSpec(spec).to_sexpr()
