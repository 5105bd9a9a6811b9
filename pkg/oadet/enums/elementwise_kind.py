from enum import Enum


class ElementwiseKind(Enum):
    SIGMOID = "sigmoid"
    TANH = "tanh"
    ONE_MINUS = "one_minus"
    MUL = "mul"
    ADD = "add"
    SUB = "sub"

    @property
    def is_binary(self) -> bool:
        return self in (ElementwiseKind.MUL, ElementwiseKind.ADD, ElementwiseKind.SUB)
