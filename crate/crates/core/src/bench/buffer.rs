use std::alloc::{alloc_zeroed, dealloc, Layout};
use std::ptr::NonNull;

/// Zeroed, cache-line-aligned buffer addressed by line. Each touch increments
/// the first word of a line with volatile accesses so the compiler cannot
/// merge or drop it.
pub struct LineBuffer {
    ptr: NonNull<u64>,
    layout: Layout,
    lines: usize,
    stride: usize,
}

// SAFETY: the buffer owns its allocation; access is governed by &/&mut.
unsafe impl Send for LineBuffer {}
unsafe impl Sync for LineBuffer {}

impl LineBuffer {
    pub fn new(lines: usize, line_bytes: usize) -> Self {
        assert!(line_bytes.is_power_of_two() && line_bytes >= 8);
        // at least one line so the layout is never zero-sized
        let layout = Layout::from_size_align(lines.max(1) * line_bytes, line_bytes)
            .expect("buffer size fits in memory");
        // SAFETY: layout has non-zero size.
        let raw = unsafe { alloc_zeroed(layout) } as *mut u64;
        let ptr = NonNull::new(raw).unwrap_or_else(|| std::alloc::handle_alloc_error(layout));
        LineBuffer {
            ptr,
            layout,
            lines,
            stride: line_bytes / 8,
        }
    }

    pub fn lines(&self) -> usize {
        self.lines
    }

    pub fn as_ptr(&self) -> *const u8 {
        self.ptr.as_ptr() as *const u8
    }

    #[inline]
    pub fn touch(&mut self, line: usize) {
        assert!(line < self.lines);
        // SAFETY: in bounds, aligned, and we hold &mut self.
        unsafe {
            let p = self.ptr.as_ptr().add(line * self.stride);
            p.write_volatile(p.read_volatile().wrapping_add(1));
        }
    }

    pub fn value(&self, line: usize) -> u64 {
        assert!(line < self.lines);
        // SAFETY: in bounds and aligned.
        unsafe { self.ptr.as_ptr().add(line * self.stride).read_volatile() }
    }

    pub fn values(&self) -> Vec<u64> {
        (0..self.lines).map(|l| self.value(l)).collect()
    }
}

impl Drop for LineBuffer {
    fn drop(&mut self) {
        // SAFETY: allocated with this layout in `new`.
        unsafe { dealloc(self.ptr.as_ptr() as *mut u8, self.layout) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aligned_and_counted() {
        let mut b = LineBuffer::new(4, 64);
        assert_eq!(b.as_ptr() as usize % 64, 0);
        b.touch(1);
        b.touch(1);
        b.touch(3);
        assert_eq!(b.values(), vec![0, 2, 0, 1]);
    }

    #[test]
    fn empty_buffer_is_fine() {
        let b = LineBuffer::new(0, 64);
        assert_eq!(b.lines(), 0);
        assert!(b.values().is_empty());
    }
}
