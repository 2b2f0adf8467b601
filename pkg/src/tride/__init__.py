"""Text-, radar- and camera-fused metric depth estimation at desk scale."""
