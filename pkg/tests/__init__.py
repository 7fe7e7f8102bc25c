"""
Test package for the RFS forensics toolkit
"""