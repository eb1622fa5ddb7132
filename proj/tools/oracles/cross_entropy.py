"""Softmax cross-entropy of logits [0.2, -0.4, 0.1] at label 2, 40 digits."""
from mpmath import mp, mpf, exp, log

mp.dps = 40
logits = [mpf("0.2"), mpf("-0.4"), mpf("0.1")]
label = 2
print(mp.nstr(log(sum(exp(z) for z in logits)) - logits[label], 25))
