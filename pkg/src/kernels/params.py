from typing import Optional

from src.search_space.space import LayerKind, LayerSpec, mixtures_for, is_pool


def param_count(
    layer_spec: LayerSpec, in_channels: int, out_channels: int, mixtures: Optional[int] = None
) -> int:
    """
    Number of learnable weights of a layer, bias excluded.

    Conv3D: L*H*W*Cin*Cout. (2+1)D: H*W*Cin*Cout + L*Cout*Cout.
    iTGM: H*W*Cin*Cout + 2M + M*Cout, independent of L. 1x1x1: Cin*Cout. Pools: 0.
    """
    kind = layer_spec.kind
    length = layer_spec.temporal_len
    spatial = layer_spec.spatial_len
    if is_pool(kind):
        return 0
    if kind == LayerKind.CONV1X1X1:
        return in_channels * out_channels
    if kind == LayerKind.CONV3D:
        return length * spatial * spatial * in_channels * out_channels
    if kind == LayerKind.CONV2PLUS1D:
        return spatial * spatial * in_channels * out_channels + length * out_channels * out_channels
    if kind == LayerKind.ITGM:
        m = mixtures if mixtures is not None else mixtures_for(length)
        return spatial * spatial * in_channels * out_channels + 2 * m + m * out_channels
    raise ValueError(f"Unknown layer kind: {kind}")


def bias_count(layer_spec: LayerSpec, out_channels: int) -> int:
    return 0 if is_pool(layer_spec.kind) else out_channels
