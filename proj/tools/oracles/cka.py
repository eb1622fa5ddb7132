"""Linear CKA of two hand-sized matrices, evaluated in exact rationals."""
from fractions import Fraction as F
from mpmath import mp, mpf, sqrt

X = [[1, 2], [3, -1], [0, 4], [2, 2]]
Y = [[F(1, 2), 1], [-1, 2], [3, 0], [1, -2]]


def centre(m):
    n = len(m)
    means = [sum(F(r[j]) for r in m) / n for j in range(len(m[0]))]
    return [[F(r[j]) - means[j] for j in range(len(r))] for r in m]


def cross(a, b):
    # a^T b
    return [[sum(a[i][p] * b[i][q] for i in range(len(a))) for q in range(len(b[0]))] for p in range(len(a[0]))]


def frob2(m):
    return sum(v * v for row in m for v in row)


xc, yc = centre(X), centre(Y)
num = frob2(cross(yc, xc))
den2 = frob2(cross(xc, xc)) * frob2(cross(yc, yc))
mp.dps = 40
print(mp.nstr(mpf(num.numerator) / mpf(num.denominator) / sqrt(mpf(den2.numerator) / mpf(den2.denominator)), 25))
