"""
Small arithmetic expression language used for kernels, potentials, densities,
connectivities and initial data in experiment files.

    expr    :: compare
    compare :: sum [ ('<' | '<=' | '>' | '>=') sum ]*
    sum     :: product [ ('+' | '-') product ]*
    product :: unary [ ('*' | '/') unary ]*
    unary   :: '-' unary | power
    power   :: atom [ '^' power ]          (right associative)
    atom    :: number | identifier | identifier '(' args ')' | '(' expr ')'

Trees are evaluated on numpy arrays (tree walk) and can be differentiated
symbolically, which is how expression kernels get their gradients.
"""
import logging
import math

import numpy as np
import pyparsing as pp

logger = logging.getLogger(__name__)

pp.ParserElement.enable_packrat()

CONSTANTS = {
    'pi': math.pi,
}

# name -> number of arguments
FUNCTIONS = {
    'exp': 1,
    'log': 1,
    'sin': 1,
    'cos': 1,
    'abs': 1,
    'sqrt': 1,
    'min': 2,
    'max': 2,
    'indicator': 1,
}


class ExpressionError(ValueError):
    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f'{message} (line {line}, column {column})'
        super().__init__(message)
        self.line = line
        self.column = column


class Node:
    """
    Base class of the syntax tree. Sub classes implement evaluate, derivative and __str__.
    """
    def evaluate(self, env):
        raise NotImplementedError()

    def derivative(self, var):
        raise NotImplementedError()

    def identifiers(self):
        return set()

    def calls(self):
        return []

    def is_constant(self):
        return not self.identifiers()


class Number(Node):
    def __init__(self, value):
        self.value = float(value)

    def evaluate(self, env):
        return self.value

    def derivative(self, var):
        return ZERO

    def __str__(self):
        if self.value < 0:
            return f'({self.value!r})'
        return repr(self.value)


class Constant(Node):
    def __init__(self, name):
        self.name = name
        self.value = CONSTANTS[name]

    def evaluate(self, env):
        return self.value

    def derivative(self, var):
        return ZERO

    def __str__(self):
        return self.name


class Variable(Node):
    def __init__(self, name, source=None, loc=0):
        self.name = name
        self._source = source
        self._loc = loc

    def evaluate(self, env):
        try:
            return env[self.name]
        except KeyError:
            raise ExpressionError(f'No value given for variable "{self.name}"') from None

    def derivative(self, var):
        return ONE if var == self.name else ZERO

    def identifiers(self):
        return {self.name}

    def position(self):
        if self._source is None:
            return None, None
        return pp.lineno(self._loc, self._source), pp.col(self._loc, self._source)

    def __str__(self):
        return self.name


class Negate(Node):
    def __init__(self, operand):
        self.operand = operand

    def evaluate(self, env):
        return -self.operand.evaluate(env)

    def derivative(self, var):
        return _neg(self.operand.derivative(var))

    def identifiers(self):
        return self.operand.identifiers()

    def calls(self):
        return self.operand.calls()

    def __str__(self):
        return f'(-{self.operand})'


class BinaryOp(Node):
    def __init__(self, op, left, right):
        self.op = op
        self.left = left
        self.right = right

    def evaluate(self, env):
        a = self.left.evaluate(env)
        b = self.right.evaluate(env)
        if self.op == '+':
            return a + b
        elif self.op == '-':
            return a - b
        elif self.op == '*':
            return a * b
        elif self.op == '/':
            if np.any(np.asarray(b) == 0):
                raise ExpressionError(f'Domain error: division by zero in "{self}"')
            return a / b
        elif self.op == '^':
            with np.errstate(invalid='ignore'):
                out = np.power(np.asarray(a, dtype=float), b)
            if np.any(np.isnan(out) & ~np.isnan(np.asarray(a, dtype=float))):
                raise ExpressionError(f'Domain error: non-real power in "{self}"')
            return out
        elif self.op in ('<', '<=', '>', '>='):
            return _COMPARE[self.op](a, b).astype(float)
        raise NotImplementedError(f'Unknown operator "{self.op}"')

    def derivative(self, var):
        a, b = self.left, self.right
        if self.op == '+':
            return _add(a.derivative(var), b.derivative(var))
        elif self.op == '-':
            return _sub(a.derivative(var), b.derivative(var))
        elif self.op == '*':
            return _add(_mul(a.derivative(var), b), _mul(a, b.derivative(var)))
        elif self.op == '/':
            numerator = _sub(_mul(a.derivative(var), b), _mul(a, b.derivative(var)))
            return _div(numerator, _pow(b, Number(2)))
        elif self.op == '^':
            if b.is_constant():
                # d(a^c) = c a^(c-1) da
                exponent = _sub(b, ONE)
                return _mul(_mul(b, _pow(a, exponent)), a.derivative(var))
            # d(a^b) = a^b (b' log a + b a' / a)
            log_a = Call('log', [a])
            inner = _add(_mul(b.derivative(var), log_a), _div(_mul(b, a.derivative(var)), a))
            return _mul(self, inner)
        # comparisons are piecewise constant
        return ZERO

    def identifiers(self):
        return self.left.identifiers() | self.right.identifiers()

    def calls(self):
        return self.left.calls() + self.right.calls()

    def __str__(self):
        return f'({self.left} {self.op} {self.right})'


class Call(Node):
    def __init__(self, name, args, source=None, loc=0):
        self.name = name
        self.args = list(args)
        self._source = source
        self._loc = loc

    def position(self):
        if self._source is None:
            return None, None
        return pp.lineno(self._loc, self._source), pp.col(self._loc, self._source)

    def evaluate(self, env):
        values = [arg.evaluate(env) for arg in self.args]
        name = self.name
        if name == 'exp':
            return np.exp(values[0])
        elif name == 'log':
            if np.any(np.asarray(values[0]) <= 0):
                raise ExpressionError(f'Domain error: log of non-positive argument in "{self}"')
            return np.log(values[0])
        elif name == 'sin':
            return np.sin(values[0])
        elif name == 'cos':
            return np.cos(values[0])
        elif name == 'abs':
            return np.abs(values[0])
        elif name == 'sqrt':
            if np.any(np.asarray(values[0]) < 0):
                raise ExpressionError(f'Domain error: sqrt of negative argument in "{self}"')
            return np.sqrt(values[0])
        elif name == 'min':
            return np.minimum(values[0], values[1])
        elif name == 'max':
            return np.maximum(values[0], values[1])
        elif name == 'indicator':
            return (np.asarray(values[0]) > 0).astype(float)
        raise ExpressionError(f'Unknown function "{name}"', *self.position())

    def derivative(self, var):
        name = self.name
        if name in ('min', 'max'):
            a, b = self.args
            pick_a = BinaryOp('<=' if name == 'min' else '>=', a, b)
            pick_b = _sub(ONE, pick_a)
            return _add(_mul(pick_a, a.derivative(var)), _mul(pick_b, b.derivative(var)))
        if name == 'indicator':
            return ZERO

        u = self.args[0]
        du = u.derivative(var)
        if isinstance(du, Number) and du.value == 0:
            return ZERO
        if name == 'exp':
            outer = self
        elif name == 'log':
            outer = _div(ONE, u)
        elif name == 'sin':
            outer = Call('cos', [u])
        elif name == 'cos':
            outer = _neg(Call('sin', [u]))
        elif name == 'abs':
            # sign(u), zero at the kink
            outer = _sub(BinaryOp('>', u, ZERO), BinaryOp('<', u, ZERO))
        elif name == 'sqrt':
            outer = _div(ONE, _mul(Number(2), self))
        else:
            raise ExpressionError(f'Unknown function "{name}"', *self.position())
        return _mul(outer, du)

    def identifiers(self):
        out = set()
        for arg in self.args:
            out |= arg.identifiers()
        return out

    def calls(self):
        out = [self]
        for arg in self.args:
            out += arg.calls()
        return out

    def __str__(self):
        return f'{self.name}({", ".join(str(a) for a in self.args)})'


ZERO = Number(0)
ONE = Number(1)

_COMPARE = {
    '<': np.less,
    '<=': np.less_equal,
    '>': np.greater,
    '>=': np.greater_equal,
}


def _is_number(node, value):
    return isinstance(node, Number) and node.value == value


def _add(a, b):
    if _is_number(a, 0):
        return b
    if _is_number(b, 0):
        return a
    if isinstance(a, Number) and isinstance(b, Number):
        return Number(a.value + b.value)
    return BinaryOp('+', a, b)


def _sub(a, b):
    if _is_number(b, 0):
        return a
    if isinstance(a, Number) and isinstance(b, Number):
        return Number(a.value - b.value)
    if _is_number(a, 0):
        return _neg(b)
    return BinaryOp('-', a, b)


def _mul(a, b):
    if _is_number(a, 0) or _is_number(b, 0):
        return ZERO
    if _is_number(a, 1):
        return b
    if _is_number(b, 1):
        return a
    if isinstance(a, Number) and isinstance(b, Number):
        return Number(a.value * b.value)
    return BinaryOp('*', a, b)


def _div(a, b):
    if _is_number(a, 0):
        return ZERO
    if _is_number(b, 1):
        return a
    return BinaryOp('/', a, b)


def _pow(a, b):
    if _is_number(b, 1):
        return a
    if _is_number(b, 0):
        return ONE
    return BinaryOp('^', a, b)


def _neg(a):
    if isinstance(a, Number):
        return Number(-a.value)
    return Negate(a)


class Expression:
    """
    Parsed expression together with its source string.
    """
    def __init__(self, root: Node, source=None):
        self.root = root
        self.source = source if source is not None else str(root)

    def __call__(self, **env):
        return self.root.evaluate(env)

    def evaluate(self, env):
        """
        :param env: mapping of variable names to floats or numpy arrays (broadcastable)
        :returns value of the expression, broadcast over the inputs
        """
        return self.root.evaluate(env)

    def derivative(self, var):
        return Expression(self.root.derivative(var))

    def identifiers(self):
        return self.root.identifiers()

    def is_constant(self):
        return self.root.is_constant()

    def as_call(self):
        """
        :returns (name, [float args]) if the expression is a call with constant arguments, otherwise None.
                 Preset names ("quadratic(0.5)", "indicator_ball(3)", ...) are written this way.
        """
        root = self.root
        if isinstance(root, Call) and all(arg.is_constant() for arg in root.args):
            return root.name, [float(arg.evaluate({})) for arg in root.args]
        if isinstance(root, Variable):
            return root.name, []
        return None

    def __str__(self):
        return str(self.root)

    def __repr__(self):
        return f'Expression({self.source!r})'


def _grammar():
    number = pp.Regex(r'(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?')
    identifier = pp.Word(pp.alphas + '_', pp.alphanums + '_')
    expr = pp.Forward()

    def number_action(s, loc, toks):
        return Number(toks[0])

    def identifier_action(s, loc, toks):
        name = toks[0]
        if name in CONSTANTS:
            return Constant(name)
        return Variable(name, source=s, loc=loc)

    def call_action(s, loc, toks):
        return Call(toks[0], toks[1:], source=s, loc=loc)

    call = identifier + pp.Suppress('(') + pp.Optional(pp.delimited_list(expr)) + pp.Suppress(')')
    operand = (call.set_parse_action(call_action)
               | number.set_parse_action(number_action)
               | identifier.copy().set_parse_action(identifier_action))
    atom = operand | pp.Suppress('(') + expr + pp.Suppress(')')

    def power_action(toks):
        return BinaryOp('^', toks[0], toks[1]) if len(toks) == 2 else toks[0]

    def negate_action(toks):
        return Negate(toks[0])

    def left_action(toks):
        node = toks[0]
        for i in range(1, len(toks), 2):
            node = BinaryOp(toks[i], node, toks[i + 1])
        return node

    # '^' is right associative and binds tighter than a leading '-', its exponent may carry a sign: x^-2
    factor = pp.Forward()
    power = (atom + pp.Optional(pp.Suppress('^') + factor)).set_parse_action(power_action)
    factor <<= (pp.Suppress('-') + factor).set_parse_action(negate_action) | power
    term = (factor + pp.ZeroOrMore(pp.one_of('* /') + factor)).set_parse_action(left_action)
    arith = (term + pp.ZeroOrMore(pp.one_of('+ -') + term)).set_parse_action(left_action)
    expr <<= (arith + pp.ZeroOrMore(pp.one_of('<= >= < >') + arith)).set_parse_action(left_action)
    return expr


_GRAMMAR = _grammar()


def parse_expression(src, variables=None, functions=None):
    """
    Parses an expression string.

    :param src: expression source
    :param variables: allowed variable names, None allows any identifier
    :param functions: additional call names accepted without arity check (e.g. preset names)
    :returns Expression
    :raises ExpressionError on syntax errors or unknown identifiers, with line and column
    """
    if src is None or not str(src).strip():
        raise ExpressionError('Empty expression')
    src = str(src)
    try:
        root = _GRAMMAR.parse_string(src, parse_all=True)[0]
    except pp.ParseBaseException as e:
        raise ExpressionError(f'Syntax error in "{src}": {e.msg}', e.lineno, e.col) from None

    functions = set(functions or ())
    for call in root.calls():
        if call.name in functions:
            continue
        if call.name not in FUNCTIONS:
            raise ExpressionError(f'Unknown identifier "{call.name}"', *call.position())
        if len(call.args) != FUNCTIONS[call.name]:
            raise ExpressionError(f'Function "{call.name}" takes {FUNCTIONS[call.name]} argument(s), '
                                  f'got {len(call.args)}', *call.position())

    if variables is not None:
        allowed = set(variables)
        for var in _variables(root):
            if var.name not in allowed:
                raise ExpressionError(f'Unknown identifier "{var.name}"', *var.position())

    return Expression(root, source=src)


def format_expression(expr):
    """
    :returns a fully parenthesised source string that parses back to an equivalent tree
    """
    return str(expr.root if isinstance(expr, Expression) else expr)


def _variables(node):
    if isinstance(node, Variable):
        yield node
    elif isinstance(node, Negate):
        yield from _variables(node.operand)
    elif isinstance(node, BinaryOp):
        yield from _variables(node.left)
        yield from _variables(node.right)
    elif isinstance(node, Call):
        for arg in node.args:
            yield from _variables(arg)


def coordinate_names(prefix, dim):
    """
    :returns ['x1', 'x2', ...] style names
    """
    return [f'{prefix}{i + 1}' for i in range(dim)]


def coordinate_env(prefix, points):
    """
    Splits an array of points (..., d) into a variable environment {prefix1: ..., prefix2: ...}.
    """
    points = np.asarray(points, dtype=float)
    return {name: points[..., i] for i, name in enumerate(coordinate_names(prefix, points.shape[-1]))}
