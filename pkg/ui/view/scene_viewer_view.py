import tkinter as tk
from tkinter import filedialog
import logging
import ttkbootstrap as ttk
from PIL import Image, ImageTk
from ui.viewmodel.scene_viewer_viewmodel import BUFFER_KINDS, SceneViewerViewModel

try:
    from tkinterdnd2 import DND_FILES, TkinterDnD
except ImportError:
    logging.warning("tkinterdnd2 not available, drag and drop will be disabled")
    DND_FILES = None
    TkinterDnD = None

DISPLAY_SIZE = 512


class SceneViewerView(ttk.Frame):
    def __init__(self, parent, viewmodel: SceneViewerViewModel):
        super().__init__(parent, padding=20)
        self.parent = parent
        self.viewmodel = viewmodel
        self.current_photo = None

        self._init_ui()
        self.pack(fill=tk.BOTH, expand=True)

        if DND_FILES:
            self.image_label.drop_target_register(DND_FILES)
            self.image_label.dnd_bind('<<Drop>>', self._on_drop)

        self.viewmodel.set_data_changed_callback(self._on_data_changed)

    def _init_ui(self):
        """Initialize all UI components"""
        title = ttk.Label(self, text="Scene Viewer", font=("Helvetica", 20, "bold"))
        title.pack(pady=(0, 15))

        content = ttk.Frame(self)
        content.pack(fill=tk.BOTH, expand=True)

        controls = ttk.Labelframe(content, text="View", padding=10)
        controls.pack(side=tk.LEFT, fill=tk.Y, padx=(0, 10))

        ttk.Label(controls, text="Cameras").pack(anchor=tk.W)
        self.camera_list = tk.Listbox(controls, height=15, exportselection=False)
        self.camera_list.pack(fill=tk.Y, expand=True, pady=(0, 10))
        self.camera_list.bind('<<ListboxSelect>>', self._on_camera_selected)

        ttk.Label(controls, text="Buffer").pack(anchor=tk.W)
        self.buffer_var = tk.StringVar(value=self.viewmodel.buffer_kind)
        buffer_box = ttk.Combobox(controls, textvariable=self.buffer_var, values=BUFFER_KINDS, state="readonly")
        buffer_box.pack(fill=tk.X, pady=(0, 10))
        buffer_box.bind('<<ComboboxSelected>>', self._on_buffer_selected)

        ttk.Label(controls, text="Hole threshold (tau)").pack(anchor=tk.W)
        self.tau_var = tk.StringVar(value=str(self.viewmodel.tau))
        tau_entry = ttk.Entry(controls, textvariable=self.tau_var, width=8)
        tau_entry.pack(fill=tk.X, pady=(0, 10))
        tau_entry.bind('<Return>', self._on_tau_changed)

        ttk.Button(controls, text="Open PLY", command=self._browse_scene, bootstyle="primary").pack(fill=tk.X, pady=(0, 5))
        ttk.Button(controls, text="Save View", command=self._save_view, bootstyle="secondary").pack(fill=tk.X)

        image_frame = ttk.Labelframe(content, text="Render", padding=10)
        image_frame.pack(side=tk.LEFT, fill=tk.BOTH, expand=True)
        hint = "Drop a PLY file here or click 'Open PLY'" if DND_FILES else "Click 'Open PLY' to load a scene"
        self.image_label = ttk.Label(image_frame, text=hint, anchor=tk.CENTER)
        self.image_label.pack(fill=tk.BOTH, expand=True)

        self.status_label = ttk.Label(self, text="", bootstyle="info")
        self.status_label.pack(fill=tk.X, pady=(10, 0))

    def _browse_scene(self):
        file_path = filedialog.askopenfilename(
            title="Select Scene",
            filetypes=[("PLY scenes", "*.ply"), ("All files", "*.*")]
        )
        if file_path:
            self._load(file_path)

    def _on_drop(self, event):
        """Handle drag and drop events"""
        file_path = event.data
        # Windows wraps paths with spaces in braces
        if file_path.startswith('{') and file_path.endswith('}'):
            file_path = file_path[1:-1]
        if file_path.lower().endswith('.ply'):
            self._load(file_path)
        else:
            self._show_status("Please drop a .ply scene file", True)

    def _load(self, file_path):
        success, message = self.viewmodel.load_scene(file_path)
        if not success:
            self._show_status(message, True)
            return
        self.camera_list.delete(0, tk.END)
        for label in self.viewmodel.camera_labels():
            self.camera_list.insert(tk.END, label)
        self.camera_list.selection_set(0)
        self._show_status("Rendering...")
        self.viewmodel.request_render()

    def _on_camera_selected(self, event=None):
        selection = self.camera_list.curselection()
        if not selection:
            return
        self.viewmodel.set_camera(selection[0])
        self._show_status("Rendering...")
        self.viewmodel.request_render()

    def _on_buffer_selected(self, event=None):
        self.viewmodel.set_buffer_kind(self.buffer_var.get())
        self.viewmodel.request_render()

    def _on_tau_changed(self, event=None):
        try:
            self.viewmodel.set_tau(float(self.tau_var.get()))
        except ValueError as e:
            self._show_status(f"Invalid tau: {e}", True)
            return
        self.viewmodel.request_render()

    def _save_view(self):
        path = filedialog.asksaveasfilename(defaultextension=".png", filetypes=[("PNG image", "*.png")])
        if path and not self.viewmodel.save_image(path):
            self._show_status("Nothing to save yet", True)

    def _on_data_changed(self):
        # called from the render thread
        self.after(0, self.update_ui)

    def update_ui(self):
        image = self.viewmodel.image
        if image is not None:
            scale = DISPLAY_SIZE / max(image.width, image.height)
            size = (max(1, int(image.width * scale)), max(1, int(image.height * scale)))
            self.current_photo = ImageTk.PhotoImage(image.resize(size, Image.Resampling.NEAREST))
            self.image_label.configure(image=self.current_photo, text="")
        self._show_status(self.viewmodel.status)

    def _show_status(self, message, is_error=False):
        self.status_label.configure(text=message, bootstyle="danger" if is_error else "info")


def launch_viewer(scene_path=None, settings=None):
    """Open the viewer window, optionally with a scene already loaded"""
    if TkinterDnD is not None:
        root = TkinterDnD.Tk()
        ttk.Style(theme="flatly")
    else:
        root = ttk.Window(themename="flatly")
    root.title("SplatComplete Viewer")
    root.geometry("900x700")
    view = SceneViewerView(root, SceneViewerViewModel(settings))
    if scene_path:
        view._load(scene_path)
    logging.info("Entering viewer event loop")
    root.mainloop()
