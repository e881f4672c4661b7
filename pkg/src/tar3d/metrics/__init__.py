from .marching import lattice_coords, marching_cubes
from .mesh import Mesh, empty_mesh, is_watertight, load_obj, load_ply, save_obj, save_ply, triangle_areas
from .occupancy import OccupancyGrid, analytic_occupancy_grid, iou, lattice_points, occupancy_grid
from .points import chamfer, fscore, sample_mesh_surface
