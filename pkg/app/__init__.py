"""
RFS forensics toolkit
Security of randomized feature selection detectors: Gaussian theory, SPAM/SVM detectors, attacks
"""
__version__ = '1.0.0'
