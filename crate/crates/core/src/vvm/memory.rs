/// Flat little-endian address space backed by lazily allocated 4 KiB pages.
/// Unbacked pages read as zero. All accesses are 8-byte words.
#[derive(Debug, Clone)]
pub struct SparseMemory {
    size: u64,
    pages: Vec<Option<Box<[u64; WORDS_PER_PAGE]>>>,
}

const PAGE_BYTES: u64 = 4096;
const WORDS_PER_PAGE: usize = (PAGE_BYTES / 8) as usize;

pub const DEFAULT_MEMORY_BYTES: u64 = 256 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BadAddress(pub u64);

impl SparseMemory {
    pub fn new(size: u64) -> Self {
        let npages = size.div_ceil(PAGE_BYTES) as usize;
        SparseMemory {
            size,
            pages: (0..npages).map(|_| None).collect(),
        }
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    /// Checks that `addr` is an aligned, in-bounds word address.
    #[inline]
    pub fn check(&self, addr: u64) -> Result<(), BadAddress> {
        if !addr.is_multiple_of(8) || addr.checked_add(8).is_none_or(|end| end > self.size) {
            Err(BadAddress(addr))
        } else {
            Ok(())
        }
    }

    #[inline]
    pub fn read(&self, addr: u64) -> Result<u64, BadAddress> {
        self.check(addr)?;
        let page = (addr / PAGE_BYTES) as usize;
        let word = ((addr % PAGE_BYTES) / 8) as usize;
        Ok(self.pages[page].as_ref().map_or(0, |p| p[word]))
    }

    #[inline]
    pub fn write(&mut self, addr: u64, value: u64) -> Result<(), BadAddress> {
        self.check(addr)?;
        let page = (addr / PAGE_BYTES) as usize;
        let word = ((addr % PAGE_BYTES) / 8) as usize;
        let p = self.pages[page].get_or_insert_with(|| Box::new([0; WORDS_PER_PAGE]));
        p[word] = value;
        Ok(())
    }

    pub fn read_f64(&self, addr: u64) -> Result<f64, BadAddress> {
        self.read(addr).map(f64::from_bits)
    }

    pub fn write_f64(&mut self, addr: u64, value: f64) -> Result<(), BadAddress> {
        self.write(addr, value.to_bits())
    }

    pub fn write_f64_slice(&mut self, addr: u64, values: &[f64]) -> Result<(), BadAddress> {
        for (i, v) in values.iter().enumerate() {
            self.write_f64(addr + 8 * i as u64, *v)?;
        }
        Ok(())
    }

    pub fn write_u64_slice(&mut self, addr: u64, values: &[u64]) -> Result<(), BadAddress> {
        for (i, v) in values.iter().enumerate() {
            self.write(addr + 8 * i as u64, *v)?;
        }
        Ok(())
    }

    pub fn read_f64_vec(&self, addr: u64, n: usize) -> Result<Vec<f64>, BadAddress> {
        (0..n).map(|i| self.read_f64(addr + 8 * i as u64)).collect()
    }

    /// Iterates the backed pages as `(base address, words)`, in address order.
    pub fn backed_pages(&self) -> impl Iterator<Item = (u64, &[u64; WORDS_PER_PAGE])> {
        self.pages
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.as_deref().map(|p| (i as u64 * PAGE_BYTES, p)))
    }
}
